// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dbnet_bench::{BenchReport, BenchResult, Harness, ScenarioConfig, Transport, EXAMPLE1_CHAIN, SETUP_COUNTS};

#[derive(Parser)]
#[command(name = "dbnet", version, about = "Transactional network control plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server (DBNET_ADDR, DBNET_JOURNAL, DBNET_FLEET_MODE).
    Serve,
    /// Run a benchmark scenario against a fresh embedded kernel.
    Bench {
        #[arg(value_enum)]
        scenario: Scenario,
        #[command(flatten)]
        opts: BenchOpts,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Setup,
    Ex1,
    Ex2,
    Load,
}

#[derive(Args)]
struct BenchOpts {
    /// Concurrent load clients.
    #[arg(long, default_value_t = 20)]
    clients: usize,
    /// Spans per load client.
    #[arg(long, default_value_t = 100)]
    spans: usize,
    /// Spans per telemetry request in the load test.
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Simulated device provisioning delay.
    #[arg(long, default_value_t = 100)]
    delay_ms: u64,
    /// Drive the scenario over loopback HTTP instead of in-process.
    #[arg(long)]
    http: bool,
    /// CSV report path; a `.txt` summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_bench(scenario: Scenario, o: &BenchOpts) -> BenchResult<BenchReport> {
    let cfg = ScenarioConfig {
        provisioning_delay: Duration::from_millis(o.delay_ms),
        clients: o.clients,
        spans_per_client: o.spans,
        batch_size: o.batch,
        seed: o.seed,
        ..ScenarioConfig::default()
    };
    let transport = if o.http { Transport::Http } else { Transport::InProcess };
    let mut h = Harness::new(cfg, transport)?;
    let mut report = BenchReport::new(h.cfg.provisioning_delay);
    let setup = h.setup_example1()?;
    if setup.counts != SETUP_COUNTS {
        return Err(dbnet_bench::BenchError::Assertion(format!(
            "setup created {:?}, expected {SETUP_COUNTS:?}",
            setup.counts
        )));
    }
    report.setup = Some(setup);
    if matches!(scenario, Scenario::Setup) {
        return Ok(report);
    }
    h.seed_nodes()?;
    match scenario {
        Scenario::Setup => {}
        Scenario::Ex1 => {
            let r = h.run_example1()?;
            if r.chain != EXAMPLE1_CHAIN {
                return Err(dbnet_bench::BenchError::Assertion(format!(
                    "provenance chain {:?}",
                    r.chain
                )));
            }
            report.ex1 = Some(r);
        }
        Scenario::Ex2 => report.ex2 = Some(h.run_example2()?),
        Scenario::Load => {
            let (c, s) = (h.cfg.clients, h.cfg.spans_per_client);
            report.load = Some(h.load_test(c, s)?);
        }
    }
    Ok(report)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve => {
            let config = match dbnet_server::Config::from_env() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("dbnet: {e}");
                    return ExitCode::from(2);
                }
            };
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => {
                    eprintln!("dbnet: {e}");
                    return ExitCode::FAILURE;
                }
            };
            match rt.block_on(dbnet_server::serve(config)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("dbnet: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Bench { scenario, opts } => match run_bench(scenario, &opts) {
            Ok(report) => {
                print!("{}", report.summary());
                if let Some(out) = &opts.out {
                    if let Err(e) = report.write(out) {
                        eprintln!("dbnet: writing report: {e}");
                        return ExitCode::FAILURE;
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("dbnet: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
