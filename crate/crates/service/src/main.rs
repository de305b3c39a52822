use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use topoexplain::explain::Mode;
use topoexplain_service::engine::{EvalOptions, ExplainRequest, Metric};
use topoexplain_service::{http, Engine, Family, Result, ServiceError, Workspace};
use tracing_subscriber::EnvFilter;

/// Generate benchmark graphs, train GCNs, and explain, promote or attack
/// their predictions through topology edits.
#[derive(Parser)]
#[command(name = "topoexplain", version)]
struct Cli {
    /// Directory holding datasets, models and cached explanations.
    #[arg(
        long,
        global = true,
        env = "TOPOEXPLAIN_WORKSPACE",
        default_value = "workspace"
    )]
    workspace_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the workspace.
    GenData {
        #[arg(value_enum)]
        family: Family,
        /// Generator overrides: inline JSON object or path to a JSON file.
        #[arg(long)]
        config: Option<String>,
        /// Dataset identifier; defaults to the family name without dashes.
        #[arg(long)]
        id: Option<String>,
    },
    /// Train the model for a dataset.
    Train {
        dataset: String,
        /// Training overrides: inline JSON object or path to a JSON file.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Explain one instance and print the explanation JSON.
    Explain(ExplainArgs),
    /// Evaluate a metric over a dataset and print a metric record.
    Eval {
        dataset: String,
        #[arg(long, value_enum)]
        metric: Metric,
        /// AUC: explain every n-th motif node.
        #[arg(long, default_value_t = 7)]
        stride: usize,
        /// DEO: comma-separated edge budgets.
        #[arg(long, value_delimiter = ',', default_value = "50,100,500")]
        budgets: Vec<usize>,
        /// P-value: number of top promote suggestions tested.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// P-value: permutation trials.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "TOPOEXPLAIN_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Concurrent explanation jobs.
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Largest optimisation step count accepted per request.
        #[arg(long, default_value_t = 1000)]
        steps_cap: usize,
    },
}

#[derive(Args)]
struct ExplainArgs {
    dataset: String,
    instance: usize,
    #[arg(long, default_value = "preserve")]
    mode: Mode,
    #[arg(long, allow_negative_numbers = true)]
    lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda2: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    budget_add: Option<usize>,
    #[arg(long)]
    budget_remove: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Further overrides: inline JSON object or path to a JSON file.
    #[arg(long)]
    config: Option<String>,
}

impl ExplainArgs {
    fn overrides(&self) -> Result<Value> {
        let mut map = match read_config(self.config.as_deref())? {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        let flags = [
            ("lambda1", self.lambda1.map(Value::from)),
            ("lambda2", self.lambda2.map(Value::from)),
            ("kappa", self.kappa.map(Value::from)),
            ("steps", self.steps.map(Value::from)),
            ("lr", self.lr.map(Value::from)),
            ("budget_add", self.budget_add.map(Value::from)),
            ("budget_remove", self.budget_remove.map(Value::from)),
            ("seed", self.seed.map(Value::from)),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.into(), v);
            }
        }
        Ok(Value::Object(map))
    }
}

/// Inline JSON when the argument starts with `{`, otherwise a file path.
fn read_config(arg: Option<&str>) -> Result<Value> {
    let Some(arg) = arg else {
        return Ok(Value::Null);
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg)
            .map_err(|e| ServiceError::NotFound(format!("config file '{arg}': {e}")))?
    };
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| ServiceError::BadRequest(format!("config: {e}")))?;
    if !v.is_object() {
        return Err(ServiceError::BadRequest(
            "config must be a JSON object".into(),
        ));
    }
    Ok(v)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ws = Workspace::open(&cli.workspace_dir)?;
    match cli.command {
        Command::GenData { family, config, id } => {
            let engine = Engine::new(ws, None);
            print(&engine.gen_data(family, id.as_deref(), &read_config(config.as_deref())?)?)
        }
        Command::Train {
            dataset,
            config,
            seed,
            epochs,
        } => {
            let mut overrides = match read_config(config.as_deref())? {
                Value::Object(m) => m,
                _ => Map::new(),
            };
            if let Some(s) = seed {
                overrides.insert("seed".into(), json!(s));
            }
            if let Some(e) = epochs {
                overrides.insert("epochs".into(), json!(e));
            }
            let engine = Engine::new(ws, None);
            print(&engine.train(&dataset, &Value::Object(overrides))?)
        }
        Command::Explain(args) => {
            let req = ExplainRequest {
                dataset: args.dataset.clone(),
                instance: args.instance,
                mode: args.mode,
                config: args.overrides()?,
            };
            let out = Engine::new(ws, None).explain(&req)?;
            println!("{}", String::from_utf8_lossy(&out.body));
            Ok(())
        }
        Command::Eval {
            dataset,
            metric,
            stride,
            budgets,
            k,
            trials,
            seed,
        } => {
            let opts = EvalOptions {
                stride,
                budgets,
                k,
                trials,
                seed,
            };
            print(&Engine::new(ws, None).eval(&dataset, metric, &opts)?)
        }
        Command::Serve {
            port,
            host,
            workers,
            steps_cap,
        } => {
            let router = http::router(Engine::new(ws, Some(steps_cap)), workers);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(http::serve(router, SocketAddr::new(host, port)))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
