use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use retarget_app::bench::bench;
use retarget_app::server::Server;
use retarget_app::service::{model_setup, replay, LoopState, MessageLog};
use retarget_core::simulate::{run_scenario, verify_trace, Scenario, Thresholds, Trace, VerificationReport};

#[derive(Parser)]
#[command(name = "retarget", version, about = "Multi-contact whole-body retargeting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Either a bare model or a scenario used as the setup.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct Setup {
    /// Robot description; no contacts are declared.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario file providing model, contacts, initial state and weights;
    /// its timeline is ignored.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl Setup {
    fn load(&self, rate: Option<f64>) -> anyhow::Result<Scenario> {
        let mut s = match (&self.model, &self.scenario) {
            (Some(m), _) => model_setup(m, rate.unwrap_or(200.0))?,
            (None, Some(p)) => Scenario::load(p).with_context(|| format!("loading {}", p.display()))?,
            (None, None) => unreachable!("clap requires one of --model and --scenario"),
        };
        if let Some(r) = rate {
            s.rate = r;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a robot description.
    Validate { model: PathBuf },
    /// Run a scenario, write its trace and verify it.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Zero the wall-clock fields so the trace is byte-reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Verify an existing trace.
    Verify {
        trace: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the live loop over WebSocket.
    Serve {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Loop rate in Hz (default 200, or the scenario's rate).
        #[arg(long)]
        rate: Option<f64>,
        /// Write the applied message log here on exit.
        #[arg(long)]
        record_log: Option<PathBuf>,
        /// Write the trace of the session here on exit.
        #[arg(long)]
        record_trace: Option<PathBuf>,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Time build and solve per tick.
    Bench {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        /// Frame commanded to sway during the run (default: the
        /// scenario's first recorded frame).
        #[arg(long)]
        frame: Option<String>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run a recorded message log into a trace.
    Replay {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_trace(trace: &Trace, path: &Path) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trace.write_jsonl(BufWriter::new(f))?;
    Ok(())
}

/// Verifies, prints a summary, optionally writes the report; true if passed.
fn check(trace: &Trace, report_path: Option<&Path>) -> anyhow::Result<bool> {
    let report: VerificationReport = verify_trace(trace, &Thresholds::default())?;
    println!(
        "{} records, min margin {:.3e}, max residual {:.3e} (bound {:.3e}), soft failures {}, build+solve p50 {:.1} µs",
        report.records,
        report.min_margin.map_or(f64::NAN, |m| m.value),
        report.max_residual.value,
        report.residual_threshold,
        report.soft_failures,
        report.timing.p50_us
    );
    for f in &report.failures {
        println!("FAIL {} at record {}: {}", f.check, f.record, f.detail);
    }
    if let Some(p) = report_path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &report)?;
    }
    println!("{}", if report.passed { "passed" } else { "FAILED" });
    Ok(report.passed)
}

async fn serve(
    state: LoopState,
    addr: String,
    duration: Option<f64>,
) -> anyhow::Result<retarget_app::server::Recording> {
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let server = Server::start(listener, state, None)?;
    println!("serving on ws://{}", server.addr);
    match duration {
        Some(d) => tokio::time::sleep(std::time::Duration::from_secs_f64(d)).await,
        None => tokio::signal::ctrl_c().await?,
    }
    server.shutdown().await
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Validate { model } => {
            let m = retarget_core::load_model(&model)?;
            println!(
                "{}: {} links, {} dof, {} frames, {} base, mass {:.3} kg",
                m.name,
                m.links.len(),
                m.dof(),
                m.frames.len(),
                if m.floating_base { "floating" } else { "fixed" },
                m.total_mass()
            );
            for w in &m.warnings {
                println!("warning: {w}");
            }
            Ok(true)
        }
        Command::Run {
            scenario,
            out,
            report,
            no_timing,
        } => {
            let s = Scenario::load(&scenario)?;
            let mut trace = run_scenario(&s)?;
            if no_timing {
                trace = trace.without_timing();
            }
            write_trace(&trace, &out)?;
            check(&trace, report.as_deref())
        }
        Command::Verify { trace, report } => {
            let f = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            check(&Trace::read_jsonl(BufReader::new(f))?, report.as_deref())
        }
        Command::Serve {
            setup,
            port,
            host,
            rate,
            record_log,
            record_trace,
            duration,
        } => {
            let mut state = LoopState::new(setup.load(rate)?)?;
            if record_trace.is_some() {
                state.record_trace();
            }
            let runtime = tokio::runtime::Runtime::new()?;
            let rec = runtime.block_on(serve(state, format!("{host}:{port}"), duration))?;
            if let Some(p) = record_log {
                rec.log.write_jsonl(BufWriter::new(File::create(&p)?))?;
                println!("message log written to {}", p.display());
            }
            if let (Some(p), Some(t)) = (record_trace, rec.trace) {
                write_trace(&t, &p)?;
                println!("trace written to {}", p.display());
            }
            Ok(true)
        }
        Command::Bench {
            setup,
            iters,
            frame,
            json,
        } => {
            let s = setup.load(None)?;
            let frame = frame.or_else(|| s.record_frames.first().cloned().filter(|_| setup.scenario.is_some()));
            let report = bench(s.session()?, frame.as_deref(), iters)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{report}");
            }
            Ok(true)
        }
        Command::Replay { log, out, report } => {
            let f = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let trace = replay(&MessageLog::read_jsonl(BufReader::new(f))?)?;
            write_trace(&trace, &out)?;
            check(&trace, report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
