//! `mspt`: run scenarios, benchmark round counts, check bounds, audit traces.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mspt_core::audit::{audit_all, AuditReport};
use mspt_core::harness::{self, check_bounds, verify_decisions, Family};
use mspt_core::runner::{run, Completion, RunOverrides, RunReport};
use mspt_core::scenario::{self, Scenario, ScenarioError};
use mspt_core::shard::Protocol;
use mspt_core::simnet::trace::TraceKind;

#[derive(Parser)]
#[command(
    name = "mspt",
    version,
    about = "Multi-shard private transaction simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Simulator seed; overrides the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Commit protocol: ppac or 2pc.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Stop once every contact's belief is final.
    #[arg(long)]
    optimize: Option<bool>,
    /// Nodes per shard.
    #[arg(long)]
    replication: Option<usize>,
    /// Where trace, metrics and audit files go.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunFlags {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            seed: self.seed,
            protocol: self.protocol,
            optimize: self.optimize,
            replication: self.replication,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    #[value(name = "1a")]
    F1a,
    #[value(name = "1b")]
    F1b,
    #[value(name = "2")]
    F2,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or built-in name) and check decisions, bounds and privacy.
    Run {
        scenario: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Round, latency and message counts per transaction size, as CSV.
    Bench {
        #[arg(long, default_value = "chain")]
        family: Family,
        /// Largest number of shards per transaction.
        #[arg(long, default_value_t = 5)]
        max_k: usize,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a scenario and check the round bounds and decisions only.
    CheckBounds {
        scenario: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a scenario and audit what each party received.
    Audit {
        scenario: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Print a scenario file or built-in as TOML.
    Show { scenario: String },
    /// Replay one of the worked dependency examples.
    ReplayFigure {
        figure: Figure,
        /// Use the dependency sets exactly as printed, without corrections.
        #[arg(long)]
        verbatim: bool,
        #[command(flatten)]
        flags: RunFlags,
    },
}

fn load(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return Scenario::parse(&text).map_err(|e| match e {
            ScenarioError::Parse {
                line,
                column,
                message,
            } => {
                anyhow::anyhow!("{arg}:{line}:{column}: {message}")
            }
            other => anyhow::anyhow!("{arg}: {other}"),
        });
    }
    match scenario::builtin(arg) {
        Some(s) => Ok(s),
        None => bail!(
            "no such file or built-in scenario `{arg}` (built-ins: {})",
            scenario::BUILTIN_NAMES.join(", ")
        ),
    }
}

fn write_out(dir: &Option<PathBuf>, name: &str, contents: &str) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = dir.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn metrics_csv(r: &RunReport) -> String {
    let mut rows = Vec::new();
    for tx in 0..r.txs.len() {
        let m = r.metrics(tx);
        rows.push(harness::BenchRow {
            shards_per_tx: r.txs[tx].shards.len(),
            protocol: r.scenario.protocol.kind,
            rounds: m.rounds,
            virtual_latency: m.virtual_latency,
            messages: m.messages,
        });
    }
    harness::to_csv(&rows)
}

fn sessions_csv(r: &RunReport) -> String {
    let mut out = String::from("tx,shard,node,initial,decision,final_round,discard_round,budget\n");
    let opt = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
    for s in &r.sessions {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.tx,
            s.shard,
            s.node,
            s.report
                .initial
                .map_or(String::new(), |b| b.decision().to_string()),
            s.report.decision.map_or(String::new(), |d| d.to_string()),
            opt(s.report.final_round),
            opt(s.report.discard_round),
            s.report.budget
        ));
    }
    out
}

fn print_summary(r: &RunReport) {
    println!(
        "scenario {} ({}, seed {})",
        r.scenario.name, r.scenario.protocol.kind, r.scenario.network.seed
    );
    println!("outcome {:?}", r.outcome);
    for tx in 0..r.txs.len() {
        let m = r.metrics(tx);
        let status = match r.completion(tx) {
            Completion::Decided => "decided".to_string(),
            Completion::Incomplete => "incomplete".to_string(),
            Completion::Aborted(why) => format!("aborted: {why}"),
        };
        println!(
            "tx {tx}: {status}; rounds {}, virtual latency {}, messages {}",
            m.rounds, m.virtual_latency, m.messages
        );
        for (shard, d) in r.decisions(tx) {
            let round = r
                .views(tx, &shard)
                .first()
                .and_then(|v| v.report.final_round);
            let d = d.map_or("none".to_string(), |d| d.to_string());
            let round = round.map_or("-".to_string(), |x| x.to_string());
            println!("  {shard}: {d} (round {round})");
        }
    }
}

/// Runs checks and prints failures. Returns the number of failed invariants.
fn check(r: &RunReport, bounds: bool, audit: Option<&AuditReport>) -> usize {
    let mut failed = 0;
    for v in verify_decisions(r) {
        println!("violation: {v}");
        failed += 1;
    }
    if bounds {
        for v in check_bounds(r) {
            println!("violation: {v}");
            failed += 1;
        }
    }
    if let Some(a) = audit {
        for f in &a.findings {
            println!("privacy: {f}");
        }
        failed += a.findings.len();
    }
    failed
}

fn write_run_files(r: &RunReport, dir: &Option<PathBuf>, audit: &AuditReport) -> Result<()> {
    write_out(dir, "trace.txt", &r.trace.export())?;
    write_out(dir, "metrics.csv", &metrics_csv(r))?;
    write_out(dir, "sessions.csv", &sessions_csv(r))?;
    write_out(dir, "audit.txt", &audit.render())
}

fn exit(failed: usize) -> ExitCode {
    if failed == 0 {
        println!("ok");
        ExitCode::SUCCESS
    } else {
        println!("{failed} failed invariant(s)");
        ExitCode::FAILURE
    }
}

fn run_and_report(sc: &Scenario, flags: &RunFlags, bounds: bool) -> Result<ExitCode> {
    let r = run(sc, &flags.overrides())?;
    let audit = audit_all(&r.trace, &r.audit);
    print_summary(&r);
    write_run_files(&r, &flags.out_dir, &audit)?;
    // The baseline reveals participants to the coordinator by design.
    let audit_gate = (r.scenario.protocol.kind == Protocol::Ppac).then_some(&audit);
    if audit_gate.is_none() && !audit.is_clean() {
        println!(
            "note: {} privacy findings (expected for 2pc)",
            audit.findings.len()
        );
    }
    Ok(exit(check(&r, bounds, audit_gate)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { scenario, flags } => run_and_report(&load(&scenario)?, &flags, true),
        Command::CheckBounds { scenario, flags } => {
            let r = run(&load(&scenario)?, &flags.overrides())?;
            print_summary(&r);
            Ok(exit(check(&r, true, None)))
        }
        Command::Audit { scenario, flags } => {
            let r = run(&load(&scenario)?, &flags.overrides())?;
            let audit = audit_all(&r.trace, &r.audit);
            print!("{}", audit.render());
            write_out(&flags.out_dir, "audit.txt", &audit.render())?;
            write_out(&flags.out_dir, "trace.txt", &r.trace.export())?;
            Ok(exit(audit.findings.len()))
        }
        Command::Bench {
            family,
            max_k,
            flags,
        } => {
            let protocols = match flags.protocol {
                Some(p) => vec![p],
                None => vec![Protocol::Ppac, Protocol::TwoPc],
            };
            let rows = harness::bench(family, max_k, &protocols, &flags.overrides())?;
            let csv = harness::to_csv(&rows);
            print!("{csv}");
            write_out(&flags.out_dir, "bench.csv", &csv)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Show { scenario } => {
            print!("{}", load(&scenario)?.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::ReplayFigure {
            figure,
            verbatim,
            flags,
        } => {
            let sc = match figure {
                Figure::F1a => scenario::figure1a(),
                Figure::F1b => scenario::figure1b(verbatim),
                Figure::F2 => scenario::figure2(verbatim),
            };
            for r in &sc.transactions[0].requests {
                println!("dep_{} = {{{}}}", r.shard, r.deps.join(", "));
            }
            let report = run(&sc, &flags.overrides())?;
            for e in report
                .trace
                .of_kind(TraceKind::StateChange)
                .chain(report.trace.of_kind(TraceKind::Finalize))
            {
                println!("t={} {} {}", e.time, e.kind.as_str(), e.summary);
            }
            let audit = audit_all(&report.trace, &report.audit);
            print_summary(&report);
            write_run_files(&report, &flags.out_dir, &audit)?;
            let gate = (report.scenario.protocol.kind == Protocol::Ppac).then_some(&audit);
            Ok(exit(check(&report, true, gate)))
        }
    }
}
