use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blindtrust::netsim::{run_scenario, trace, Protocol, RunReport, Scenario, ScenarioError};
use clap::{Parser, Subcommand};

/// Oblivious remote attestation simulator.
#[derive(Parser)]
#[command(name = "blindtrust", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenario files.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Time the VF-side TPM work of each protocol.
    Bench {
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Also write the report, with raw samples, as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Read traces written by `scenario run --trace`.
    #[command(subcommand)]
    Trace(TraceCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run one scenario.
    Run {
        file: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long, env = "BLINDTRUST_SEED")]
        seed: Option<u64>,
        /// Write the JSONL trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the run report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run every `*.json` scenario in a directory.
    Suite {
        dir: PathBuf,
        #[arg(long, env = "BLINDTRUST_SEED")]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Check a trace against the line schema and print it readably.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        protocol: Option<Protocol>,
    },
}

const OK: u8 = 0;
const FAILED: u8 = 1;
const MALFORMED: u8 = 2;

fn load(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| match e {
        ScenarioError::Parse(p) => format!("{}:{}:{}: {p}", path.display(), p.line(), p.column()),
        other => format!("{}: {other}", path.display()),
    })
}

fn summary(r: &RunReport) -> String {
    let mut out = format!("scenario {} (seed {})\n", r.name, r.seed);
    for s in &r.steps {
        out.push_str(&format!("  {:<28} {}", s.label, s.outcome));
        if s.errors.len() > 1 || (s.errors.len() == 1 && s.errors[0] != s.outcome) {
            out.push_str(&format!("  [{}]", s.errors.join(", ")));
        }
        out.push('\n');
        for d in &s.detail {
            out.push_str(&format!("      {d}\n"));
        }
    }
    out.push_str(&format!(
        "accepted {}, soundness violations {}\n",
        r.accepted, r.soundness_violations
    ));
    for h in &r.hazards {
        out.push_str(&format!("hazard: {h}\n"));
    }
    if let Some(f) = &r.failure {
        out.push_str(&format!("assertion {} failed after {}\n", f.assertion, f.label));
        for d in &f.detail {
            out.push_str(&format!("  {d}\n"));
        }
        if !f.diff.is_null() && f.diff != serde_json::json!({}) {
            out.push_str(&format!("  state diff: {}\n", f.diff));
        }
    }
    out.push_str(if r.expectation_met { "expectation met\n" } else { "expectation NOT met\n" });
    out
}

fn scenario_run(file: &Path, seed: Option<u64>, trace_out: Option<&Path>, json: bool) -> u8 {
    let scenario = match load(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return MALFORMED;
        }
    };
    let (report, tr) = run_scenario(&scenario, seed);
    if let Some(p) = trace_out {
        if let Err(e) = fs::write(p, tr.to_jsonl()) {
            eprintln!("error: {}: {e}", p.display());
            return MALFORMED;
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", summary(&report));
    }
    if report.expectation_met {
        OK
    } else {
        FAILED
    }
}

fn scenario_suite(dir: &Path, seed: Option<u64>) -> u8 {
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            return MALFORMED;
        }
    };
    files.sort();
    let mut code = OK;
    let (mut met, mut total) = (0, 0);
    for f in &files {
        total += 1;
        match load(f) {
            Err(e) => {
                println!("MALFORMED {e}");
                code = MALFORMED;
            }
            Ok(s) => {
                let (r, _) = run_scenario(&s, seed);
                let why = r.failure.as_ref().map(|f| format!(" ({} after {})", f.assertion, f.label)).unwrap_or_default();
                if r.expectation_met {
                    met += 1;
                    println!("ok   {}{why}", r.name);
                } else {
                    println!("FAIL {}{why}", r.name);
                    if code == OK {
                        code = FAILED;
                    }
                }
            }
        }
    }
    println!("{met}/{total} scenarios met their expectation");
    code
}

fn trace_inspect(file: &Path, protocol: Option<Protocol>) -> u8 {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return MALFORMED;
        }
    };
    match trace::inspect(&text, protocol) {
        Ok(i) => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = std::io::stdout().write_all(i.rendered.as_bytes());
            if i.leaks.is_empty() {
                println!("no secrets found");
                OK
            } else {
                println!("secrets found on lines {:?}", i.leaks);
                FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {}:{e}", file.display());
            MALFORMED
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Scenario(ScenarioCmd::Run { file, seed, trace, json }) => {
            scenario_run(&file, seed, trace.as_deref(), json)
        }
        Cmd::Scenario(ScenarioCmd::Suite { dir, seed }) => scenario_suite(&dir, seed),
        Cmd::Bench { iters, json } => {
            let report = blindtrust::bench::run(iters);
            print!("{}", report.render());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                if let Err(e) = fs::write(&p, text) {
                    eprintln!("error: {}: {e}", p.display());
                    return ExitCode::from(MALFORMED);
                }
            }
            OK
        }
        Cmd::Trace(TraceCmd::Inspect { file, protocol }) => trace_inspect(&file, protocol),
    };
    ExitCode::from(code)
}
