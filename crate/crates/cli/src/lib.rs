//! Command-line front end: every stage of the pipeline as a subcommand with
//! file-based handoff, plus the simulator and a read-only HTTP endpoint.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use buildkg::conjunction::{
    build_windows, detect, detections_from_csv, detections_to_csv, fit_ols, pair_events, report,
    room_features, Direction, OlsModel, DEFAULT_COARSE_S, DEFAULT_K1, DEFAULT_K2,
};
use buildkg::ingest::{normalize, parse_samples, EventStream, SensorSample, StatusStore};
use buildkg::pipeline::{run_pipeline, PipelineConfig, PipelineError, Stage};
use buildkg::query::{execute, parse_query, QueryError};
use buildkg::sample::sample_building;
use buildkg::simulator::{score_detector, simulate, truth_from_csv, SimConfig};
use buildkg::timeprob::{build_tables, tables_to_csv, BuildingClock, ThresholdPolicy};
use buildkg::topology::{load_topology, TopologyGraph};
use buildkg::EventKind;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    /// Runtime or data problem.
    pub fn data(message: impl fmt::Display) -> Self {
        CliError {
            code: 1,
            message: message.to_string(),
        }
    }

    /// Bad invocation or unparsable query.
    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::data(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "buildkg",
    version,
    about = "Building knowledge graph and sensor event analytics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a SPARQL-subset query against the topology and print CSV.
    Query {
        #[command(flatten)]
        topology: TopologyArg,
        /// Query file; stdin when absent or `-`.
        file: Option<PathBuf>,
    },
    /// Normalize raw sensor samples into semantic events (CSV).
    Ingest {
        #[command(flatten)]
        input: EventsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hourly probability tables of light events (CSV).
    Stats {
        #[command(flatten)]
        input: EventsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pair events and fit the interval regression (JSON model).
    Calibrate {
        #[command(flatten)]
        input: EventsArg,
        #[command(flatten)]
        pairing: PairingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge every candidate pair against windows built from a model (CSV).
    Detect {
        #[command(flatten)]
        input: EventsArg,
        /// Model written by `calibrate`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_COARSE_S)]
        coarse_s: f64,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-room conditional conjunction probabilities (CSV).
    Report {
        #[command(flatten)]
        input: EventsArg,
        /// Verdicts written by `detect`.
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long, default_value = "lightoff-elevator")]
        direction: Direction,
        /// Drop rooms with fewer trigger events than this.
        #[arg(long, default_value_t = 0)]
        min_room_events: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write the report files into a directory.
    Pipeline {
        #[command(flatten)]
        input: EventsArg,
        #[command(flatten)]
        pairing: PairingArgs,
        #[command(flatten)]
        window: WindowArgs,
        /// Anomaly threshold: `0.1`, `fixed:0.1` or `mass:0.05`.
        #[arg(long, default_value = "0.1")]
        pbar: ThresholdPolicy,
        #[arg(long, default_value_t = 0)]
        min_room_events: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic trace with planted conjunctions.
    Simulate {
        #[command(flatten)]
        topology: TopologyArg,
        /// JSON simulator config; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<u32>,
        /// Overrides the walking noise of every occupant (seconds).
        #[arg(long)]
        noise_std: Option<f64>,
        /// Output directory for samples.jsonl and truth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve `GET /v1/status?ucode=..&from=..&to=..` over the given samples.
    Serve {
        #[command(flatten)]
        input: EventsArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Precision and recall of verdicts against planted truth.
    Score {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        /// Score only the truth of this direction.
        #[arg(long)]
        direction: Option<Direction>,
    },
}

#[derive(Debug, Args)]
pub struct TopologyArg {
    /// Topology JSON document; the bundled sample building when absent.
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EventsArg {
    #[command(flatten)]
    pub topology: TopologyArg,
    /// Sensor samples, one JSON object per line.
    #[arg(long)]
    pub events: PathBuf,
    /// Building clock offset from UTC, in seconds.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub utc_offset_s: i32,
}

#[derive(Debug, Args)]
pub struct PairingArgs {
    #[arg(long, default_value = "lightoff-elevator")]
    pub direction: Direction,
    #[arg(long, default_value_t = DEFAULT_COARSE_S)]
    pub coarse_s: f64,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, default_value_t = DEFAULT_K1)]
    pub k1: f64,
    #[arg(long, default_value_t = DEFAULT_K2)]
    pub k2: f64,
}

impl TopologyArg {
    fn load(&self) -> Result<TopologyGraph> {
        match &self.topology {
            None => Ok(sample_building()),
            Some(path) => load_topology(&read(path)?)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display()))),
        }
    }
}

impl EventsArg {
    fn clock(&self) -> Result<BuildingClock> {
        BuildingClock::with_offset(self.utc_offset_s).map_err(CliError::usage)
    }

    fn samples(&self) -> Result<Vec<SensorSample>> {
        parse_samples(&read(&self.events)?)
            .map_err(|e| CliError::data(format!("{}: {e}", self.events.display())))
    }

    fn load(&self) -> Result<(TopologyGraph, EventStream)> {
        let g = self.topology.load()?;
        let stream = normalize(&self.samples()?, &g).map_err(CliError::data)?;
        Ok((g, stream))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => stdout.write_all(text.as_bytes()).map_err(CliError::data),
    }
}

fn check_thresholds(coarse_s: f64, k1: f64, k2: f64) -> Result<()> {
    if !(coarse_s > 0.0) {
        return Err(CliError::usage(format!(
            "--coarse-s must be positive, got {coarse_s}"
        )));
    }
    if !(k1 >= 0.0 && k2 >= 0.0) {
        return Err(CliError::usage(format!(
            "--k1 and --k2 must be non-negative, got {k1} and {k2}"
        )));
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand. Help and
/// version requests print to `stdout` and succeed.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(stdout, "{e}").map_err(CliError::data);
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::usage(
                text.trim_start_matches("error: ").trim_end(),
            ));
        }
    };
    dispatch(cli.command, stdout)
}

pub fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Query { topology, file } => {
            let g = topology.load()?;
            let text = match file {
                Some(path) if path.as_os_str() != "-" => read(&path)?,
                _ => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s).map_err(CliError::data)?;
                    s
                }
            };
            let table = parse_query(&text)
                .and_then(|ast| execute(&ast, &g))
                .map_err(query_error)?;
            emit(&None, &table.to_csv(), stdout)
        }
        Command::Ingest { input, out } => {
            let (_, stream) = input.load()?;
            emit(&out, &stream.to_csv(), stdout)
        }
        Command::Stats { input, out } => {
            let clock = input.clock()?;
            let (_, stream) = input.load()?;
            let tables = build_tables(&stream, &[EventKind::LightOn, EventKind::LightOff], clock);
            emit(&out, &tables_to_csv(&tables), stdout)
        }
        Command::Calibrate {
            input,
            pairing,
            out,
        } => {
            check_thresholds(pairing.coarse_s, 0.0, 0.0)?;
            let (g, stream) = input.load()?;
            let pairs = pair_events(&stream, &g, pairing.direction, pairing.coarse_s)
                .map_err(CliError::data)?;
            let model = fit_ols(&pairs).map_err(CliError::data)?;
            emit(&out, &model.to_json(), stdout)
        }
        Command::Detect {
            input,
            model,
            coarse_s,
            window,
            out,
        } => {
            check_thresholds(coarse_s, window.k1, window.k2)?;
            let model_text = read(&model)?;
            let model = OlsModel::from_json(&model_text)
                .map_err(|e| CliError::data(format!("{}: {e}", model.display())))?;
            let (g, stream) = input.load()?;
            let features = room_features(&g).map_err(CliError::data)?;
            let windows =
                build_windows(&model, &features, window.k1, window.k2).map_err(CliError::data)?;
            let detections = detect(&stream, &g, &windows, coarse_s).map_err(CliError::data)?;
            emit(&out, &detections_to_csv(&detections), stdout)
        }
        Command::Report {
            input,
            verdicts,
            direction,
            min_room_events,
            out,
        } => {
            let detections = detections_from_csv(&read(&verdicts)?).map_err(CliError::data)?;
            let (_, stream) = input.load()?;
            let summary = report(&detections, &stream, direction, min_room_events);
            emit(&out, &summary.to_csv(), stdout)
        }
        Command::Pipeline {
            input,
            pairing,
            window,
            pbar,
            min_room_events,
            out,
        } => {
            check_thresholds(pairing.coarse_s, window.k1, window.k2)?;
            let cfg = PipelineConfig {
                pbar,
                coarse_s: pairing.coarse_s,
                k1: window.k1,
                k2: window.k2,
                direction: pairing.direction,
                clock: input.clock()?,
                min_room_events,
            };
            let g = input.topology.load()?;
            let samples = input
                .samples()
                .map_err(|e| PipelineError::new(Stage::Ingest, e))?;
            let outputs = run_pipeline(&g, &samples, &cfg)?;
            fs::create_dir_all(&out)
                .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
            for (name, text) in outputs.files() {
                write_file(&out.join(name), text)?;
            }
            writeln!(
                stdout,
                "wrote {} files to {}",
                outputs.files().len(),
                out.display()
            )
            .map_err(CliError::data)
        }
        Command::Simulate {
            topology,
            config,
            seed,
            days,
            noise_std,
            out,
        } => {
            let g = topology.load()?;
            let mut cfg = match config {
                Some(path) => SimConfig::from_json(&read(&path)?).map_err(CliError::usage)?,
                None => SimConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(days) = days {
                cfg.days = days;
            }
            if let Some(noise) = noise_std {
                cfg = cfg.with_noise(noise);
            }
            let bundle = simulate(&g, &cfg).map_err(CliError::data)?;
            fs::create_dir_all(&out)
                .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
            write_file(&out.join("samples.jsonl"), &bundle.samples_jsonl())?;
            write_file(&out.join("truth.csv"), &bundle.truth_csv())?;
            writeln!(
                stdout,
                "{} samples, {} planted conjunctions, seed {}",
                bundle.samples.len(),
                bundle.truth.len(),
                bundle.seed
            )
            .map_err(CliError::data)
        }
        Command::Serve { input, bind } => {
            let g = input.topology.load()?;
            let store = StatusStore::new(g, input.samples()?).map_err(CliError::data)?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(CliError::data)?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(bind)
                    .await
                    .map_err(|e| CliError::data(format!("cannot bind {bind}: {e}")))?;
                let addr = listener.local_addr().map_err(CliError::data)?;
                writeln!(stdout, "listening on http://{addr}").map_err(CliError::data)?;
                stdout.flush().map_err(CliError::data)?;
                axum::serve(listener, router(Arc::new(store)))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(CliError::data)
            })
        }
        Command::Score {
            truth,
            verdicts,
            direction,
        } => {
            let mut truth = truth_from_csv(&read(&truth)?).map_err(CliError::data)?;
            truth.retain(|t| direction.is_none_or(|d| t.direction == d));
            let detections = detections_from_csv(&read(&verdicts)?).map_err(CliError::data)?;
            writeln!(stdout, "{}", score_detector(&truth, &detections)).map_err(CliError::data)
        }
    }
}

fn query_error(e: QueryError) -> CliError {
    CliError::usage(format!("query: {e}"))
}

#[derive(Debug, Deserialize)]
pub struct StatusParams {
    pub ucode: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
}

/// Routes of the status endpoint over an immutable store.
pub fn router(store: Arc<StatusStore>) -> Router {
    Router::new()
        .route("/v1/status", get(status))
        .with_state(store)
}

async fn status(State(store): State<Arc<StatusStore>>, Query(p): Query<StatusParams>) -> Response {
    let Some(ucode) = p.ucode else {
        return error_response(
            StatusCode::BAD_REQUEST,
            "missing required parameter `ucode`",
        );
    };
    match store.serve_get(&ucode, p.from.as_deref(), p.to.as_deref()) {
        Ok(payload) => Json(payload).into_response(),
        Err(e) => {
            let code =
                StatusCode::from_u16(e.status_code()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            error_response(code, &e.to_string())
        }
    }
}

fn error_response(code: StatusCode, message: &str) -> Response {
    (code, Json(serde_json::json!({ "error": message }))).into_response()
}
