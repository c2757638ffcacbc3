use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coral_scenario::{run_scenario, verify_audit, Expectations, Script};

#[derive(Parser)]
#[command(name = "coral-scenario", version, about = "Run and check Coral scenario scripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a script against a node started with --enable-test-clock.
    Run {
        script: PathBuf,
        /// host:port or URL of the node.
        #[arg(long, default_value = "127.0.0.1:5555")]
        server: String,
        /// Where the transcript and audit CSV go.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Recompute per-session conservation from an audit CSV.
    Verify {
        csv: PathBuf,
        #[arg(long)]
        session: Option<String>,
        /// JSON file: {"sessions": {"<id>": {"deposited": n, "claimed": n, "refunded": n}}}
        #[arg(long)]
        expect: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            script,
            server,
            out_dir,
        } => {
            let parsed = Script::load(&script)?;
            let stem = script
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| parsed.name.clone());
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            let result = rt.block_on(run_scenario(&parsed, &server));
            let (report, failure) = match result {
                Ok(r) => (r, None),
                Err(f) => (f.report, Some(f.error)),
            };
            std::fs::create_dir_all(&out_dir)?;
            let transcript = out_dir.join(format!("{stem}.transcript.jsonl"));
            std::fs::write(&transcript, report.transcript_jsonl())?;
            let audit = out_dir.join(format!("{stem}.audit.csv"));
            std::fs::write(&audit, &report.audit_csv)?;
            println!("transcript: {}", transcript.display());
            println!("audit: {}", audit.display());
            match failure {
                None => {
                    println!("{}: {} steps ok", parsed.name, parsed.steps.len());
                    Ok(ExitCode::SUCCESS)
                }
                Some(e) => {
                    eprintln!("{}: FAILED at {e}", parsed.name);
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Verify { csv, session, expect } => {
            let expectations: Expectations = match expect {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => Expectations::default(),
            };
            let file = std::fs::File::open(&csv)?;
            let report = verify_audit(file, session.as_deref(), &expectations)?;
            for (sid, t) in &report.sessions {
                println!(
                    "session {sid}: deposited {} claimed {} refunded {}{}",
                    t.deposited,
                    t.claimed,
                    t.refunded,
                    if t.closed { "" } else { " (open)" }
                );
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for v in &report.violations {
                eprintln!("violation: {v}");
            }
            if report.passed() {
                println!("PASS");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("FAIL");
                Ok(ExitCode::from(1))
            }
        }
    }
}
