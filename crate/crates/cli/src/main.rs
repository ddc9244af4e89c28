//! `mirage`: runs the feasibility-consistency pipeline, whole or by stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mirage_core::config::{plan, ConfigFile, Services};
use mirage_core::domain::{ReviewMode, RunConfig};
use mirage_core::metrics::MetricsReport;
use mirage_core::pipeline::{report_from_log, PipelineError, ReviewStatus, RunOutcome, Session, SessionOptions};
use mirage_core::store::RunStore;
use mirage_review::{Desks, ServiceOptions};
use tracing::Level;

const DEFAULT_STORE: &str = "mirage-runs";

#[derive(Debug, Parser)]
#[command(name = "mirage", version, about = "Feasibility self-assessment consistency harness")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run id; overrides `run_id` from the config.
    #[arg(long = "run", global = true)]
    run_id: Option<String>,
    /// Continue an existing run instead of refusing to touch it.
    #[arg(long, global = true)]
    resume: bool,
    /// Root seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads per stage.
    #[arg(long, global = true, default_value_t = mirage_core::pipeline::DEFAULT_PARALLELISM)]
    parallelism: usize,
    /// Accept every pending review item without waiting for experts.
    #[arg(long, global = true)]
    auto_accept: bool,
    /// Classify originals too instead of trusting their validation.
    #[arg(long, global = true)]
    reclassify_originals: bool,
    /// Directory holding `runs/`; overrides `store_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output on stderr (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Every stage in order, then the report.
    Run,
    /// Print the task counts a configuration implies, without calling any provider.
    Plan,
    /// Generate and validate original tasks.
    Generate,
    /// Build perturbed variants, including replacements for rejected ones.
    Perturb,
    /// Serve the review queue over HTTP. With --auto-accept, accept everything and exit.
    ReviewServe {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
        /// Built review UI bundle to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Origin allowed by CORS; any origin when unset.
        #[arg(long)]
        ui_origin: Option<String>,
    },
    /// Classify every review-cleared task.
    Classify,
    /// Write report.json and report.csv and print one of them.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

struct Context {
    file: ConfigFile,
    store: RunStore,
    run_id: String,
}

impl Context {
    fn load(cli: &Cli) -> Result<Context, Failure> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Failure::usage("--config is required for this command"))?;
        let mut file = ConfigFile::load(path).map_err(|e| Failure::usage(e.to_string()))?;
        apply_overrides(&mut file.run, cli);
        file.validate().map_err(|e| Failure::usage(e.to_string()))?;
        let run_id = cli
            .run_id
            .clone()
            .or_else(|| file.run_id.clone())
            .ok_or_else(|| Failure::usage("no run id: pass --run or set run_id in the config"))?;
        let root = cli
            .out
            .clone()
            .or_else(|| file.store_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE));
        let store = RunStore::new(root).with_fsync(file.fsync);
        tracing::info!(plan = %plan(&file.run), "configuration loaded");
        Ok(Context { file, store, run_id })
    }

    fn services(&self) -> Result<Services, Failure> {
        Services::from_config(&self.file).map_err(|e| Failure::usage(e.to_string()))
    }

    fn session(&self, cli: &Cli, create: bool) -> Result<Session, Failure> {
        let services = self.services()?;
        if create {
            let opts = SessionOptions {
                resume: cli.resume,
                parallelism: cli.parallelism,
            };
            Ok(Session::start(&self.store, &self.run_id, &self.file.run, &services, &opts)?)
        } else {
            Ok(Session::open(&self.store, &self.run_id, &services, cli.parallelism)?)
        }
    }
}

fn apply_overrides(run: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    if cli.reclassify_originals {
        run.reclassify_originals = true;
    }
    if cli.auto_accept {
        run.review_mode = ReviewMode::AutoAccept;
    }
}

fn auto_accept(cli: &Cli, run: &RunConfig) -> bool {
    cli.auto_accept || run.review_mode == ReviewMode::AutoAccept
}

fn log_calls(session: &Session) {
    let live = session.calls().live_digests().len();
    eprintln!("provider calls: {live} live, {} answered from the run log", session.calls().hits());
}

fn print_paths(report: &MetricsReport, json: &std::path::Path, csv: &std::path::Path) {
    if report.banner.is_some() {
        eprintln!("warning: {}", mirage_core::metrics::BANNER_TEXT);
    }
    println!("{}", json.display());
    println!("{}", csv.display());
}

fn execute(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Plan => {
            let mut run = match &cli.config {
                Some(path) => ConfigFile::load(path).map_err(|e| Failure::usage(e.to_string()))?.run,
                None => RunConfig::default(),
            };
            apply_overrides(&mut run, cli);
            run.validate().map_err(|e| Failure::usage(e.to_string()))?;
            println!("{}", plan(&run));
            Ok(0)
        }
        Command::Run => {
            let ctx = Context::load(cli)?;
            let session = ctx.session(cli, true)?;
            let outcome = session.run_all(auto_accept(cli, &ctx.file.run));
            log_calls(&session);
            match outcome? {
                RunOutcome::Reported {
                    report,
                    paths,
                    aborted_sets,
                } => {
                    print_paths(&report, &paths.json, &paths.csv);
                    if aborted_sets > 0 {
                        return Err(Failure {
                            code: 3,
                            message: format!("{aborted_sets} task sets aborted on provider failure; rerun with --resume"),
                        });
                    }
                    Ok(0)
                }
                RunOutcome::AwaitingReview(n) => {
                    eprintln!("{n} items await expert review; run `mirage review-serve --run {}`", ctx.run_id);
                    Ok(0)
                }
            }
        }
        Command::Generate => {
            let ctx = Context::load(cli)?;
            let resume = cli.resume || ctx.store.exists(&ctx.run_id);
            let opts = SessionOptions {
                resume,
                parallelism: cli.parallelism,
            };
            let session = Session::start(&ctx.store, &ctx.run_id, &ctx.file.run, &ctx.services()?, &opts)?;
            let result = session.generate();
            log_calls(&session);
            result?;
            Ok(0)
        }
        Command::Perturb => {
            let ctx = Context::load(cli)?;
            let session = ctx.session(cli, false)?;
            let result = session.perturb();
            log_calls(&session);
            result?;
            Ok(0)
        }
        Command::ReviewServe { addr, ui_dir, ui_origin } => {
            let ctx = Context::load(cli)?;
            if cli.auto_accept {
                let session = ctx.session(cli, false)?;
                return match session.review(true)? {
                    ReviewStatus::Settled => Ok(0),
                    ReviewStatus::NeedsVariants(n) => {
                        eprintln!("{n} rejected variants need replacements; run `mirage perturb` then review again");
                        Ok(0)
                    }
                    ReviewStatus::AwaitingReview(n) => Err(Failure {
                        code: 1,
                        message: format!("{n} items still pending after auto-accept"),
                    }),
                };
            }
            let mut opts = ServiceOptions::from_env();
            opts.ui_dir = ui_dir.clone();
            opts.ui_origin = ui_origin.clone();
            let desks = Desks::new(ctx.store.clone());
            desks.get(&ctx.run_id).map_err(|e| Failure::usage(e.0.to_string()))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
            runtime
                .block_on(mirage_review::serve(addr, desks, &opts))
                .map_err(|e| Failure {
                    code: 1,
                    message: format!("review service: {e}"),
                })?;
            Ok(0)
        }
        Command::Classify => {
            let ctx = Context::load(cli)?;
            let session = ctx.session(cli, false)?;
            match session.review(false)? {
                ReviewStatus::Settled => {}
                ReviewStatus::AwaitingReview(n) => {
                    return Err(Failure::usage(format!("{n} items still await review")));
                }
                ReviewStatus::NeedsVariants(n) => {
                    return Err(Failure::usage(format!(
                        "{n} rejected variants need replacements; run `mirage perturb` first"
                    )));
                }
            }
            let result = session.classify();
            log_calls(&session);
            let status = result?;
            eprintln!("{} verdicts recorded", status.verdicts);
            if !status.aborted.is_empty() {
                for (set, error) in &status.aborted {
                    eprintln!("set {set} aborted: {error}");
                }
                return Ok(3);
            }
            Ok(0)
        }
        Command::Report { format } => {
            let ctx = Context::load(cli)?;
            let (report, _) = report_from_log(&ctx.store, &ctx.run_id)?;
            match format {
                Format::Csv => print!("{}", report.to_csv()),
                Format::Json => print!("{}", report.to_json()),
            }
            if report.banner.is_some() {
                eprintln!("warning: {}", mirage_core::metrics::BANNER_TEXT);
            }
            Ok(0)
        }
    }
}
