//! Command-line front end for the net engine.
//!
//! Every subcommand takes a bundle file (a JSON net or a `{"nets", "root"}`
//! namespace) and works on its root net, dispatching on whether that net is
//! flat, guarded, or hierarchical. Exit codes: 0 on success, 1 when the
//! engine answers in the negative (a firing or replay is rejected, a target
//! is not reachable within the bound, a session logs a rejected message),
//! and 2 for unusable invocations or inputs. `--json` switches the answer
//! on standard output to machine-readable JSON.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use hiernet_core::txn::{records_from_jsonl, records_to_jsonl};
use hiernet_core::{
    export_pnml, load_bundle, ChildStatePolicy, ContractState, Execution, GuardedMarking,
    HierExecution, Ledger, LogRecord, Marking, Message, NetDef, Outcome, Witness,
};

#[derive(Parser)]
#[command(name = "hiernet", version, about = "Work with flat, guarded, and hierarchical nets")]
struct Cli {
    /// Emit machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a bundle and check every structural invariant.
    Validate {
        /// Bundle file to check.
        bundle: PathBuf,
    },
    /// Fire one transition of the root net.
    Fire {
        bundle: PathBuf,
        /// Marking file: a plain marking, or `{"shape", "state"}` for
        /// guarded nets.
        #[arg(long)]
        marking: PathBuf,
        /// Transition to fire.
        #[arg(long)]
        transition: String,
        /// Witness file: a span apex element as a JSON string for guarded
        /// nets, an `{"a", "x", "b"}` object for hierarchical nets.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Replay a multi-step run against the root net.
    Replay {
        bundle: PathBuf,
        /// Run file: `{"start", "steps"}`, with steps as transition ids for
        /// flat nets, `{"transition", "witness"}` objects otherwise.
        #[arg(long)]
        execution: PathBuf,
    },
    /// Flatten a guarded or hierarchical root net into a plain net.
    Internalize {
        bundle: PathBuf,
        /// Maximum child-run length when flattening a hierarchical net.
        #[arg(long, default_value_t = 0)]
        child_bound: usize,
        /// Where to write the flattened net (JSON, loadable as a bundle).
        #[arg(long)]
        out: PathBuf,
        /// Also export the flattened net as PNML.
        #[arg(long)]
        pnml: Option<PathBuf>,
    },
    /// Breadth-first reachability on the root net, up to a step bound.
    Reach {
        bundle: PathBuf,
        /// Start marking file (stateful `{"shape", "state"}` for guarded
        /// and hierarchical nets).
        #[arg(long)]
        from: PathBuf,
        /// Target marking file, same format as `--from`.
        #[arg(long)]
        to: PathBuf,
        /// Maximum number of steps to search.
        #[arg(long)]
        bound: usize,
        /// Maximum child-run length (hierarchical nets only).
        #[arg(long)]
        child_bound: Option<usize>,
    },
    /// Run a script of messages against a ledger file.
    Simulate {
        /// Ledger log file; replayed if present, created otherwise.
        #[arg(long)]
        ledger: PathBuf,
        /// Newline-delimited JSON messages to submit.
        #[arg(long)]
        script: PathBuf,
        /// How hierarchical firings treat child contract state.
        #[arg(long, value_enum, default_value_t = PolicyArg::Persistent)]
        policy: PolicyArg,
    },
    /// Submit newline-delimited JSON messages from standard input,
    /// emitting one outcome per line.
    Serve {
        /// Ledger log file; replayed if present, created otherwise.
        #[arg(long)]
        ledger: PathBuf,
        /// How hierarchical firings treat child contract state.
        #[arg(long, value_enum, default_value_t = PolicyArg::Persistent)]
        policy: PolicyArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    /// Child runs must pick up from the child contract's stored state.
    Persistent,
    /// Each firing rewinds the child contract to the play marking first.
    Reset,
}

impl From<PolicyArg> for ChildStatePolicy {
    fn from(arg: PolicyArg) -> Self {
        match arg {
            PolicyArg::Persistent => ChildStatePolicy::Persistent,
            PolicyArg::Reset => ChildStatePolicy::Reset,
        }
    }
}

/// A failed invocation: either the engine said no (exit 1) or the
/// invocation itself was unusable (exit 2).
enum Failure {
    Rejected(String),
    Invalid(String),
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure::Invalid(message.into())
}

fn rejected<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Rejected(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Rejected(message)) => {
            eprintln!("rejected: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::Validate { bundle } => validate(bundle, cli.json),
        Command::Fire { bundle, marking, transition, witness } => {
            fire(bundle, marking, transition, witness.as_deref(), cli.json)
        }
        Command::Replay { bundle, execution } => replay(bundle, execution, cli.json),
        Command::Internalize { bundle, child_bound, out, pnml } => {
            internalize(bundle, *child_bound, out, pnml.as_deref(), cli.json)
        }
        Command::Reach { bundle, from, to, bound, child_bound } => {
            reach(bundle, from, to, *bound, *child_bound, cli.json)
        }
        Command::Simulate { ledger, script, policy } => {
            simulate(ledger, script, (*policy).into(), cli.json)
        }
        Command::Serve { ledger, policy } => serve(ledger, (*policy).into()),
    }
}

fn load_root(path: &Path) -> Result<std::sync::Arc<NetDef>, Failure> {
    let bundle = load_bundle(path).map_err(|e| invalid(e.to_string()))?;
    Ok(bundle.root_net().clone())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{what} {}: {e}", path.display())))
}

fn validate(bundle_path: &Path, as_json: bool) -> Result<ExitCode, Failure> {
    let bundle = load_bundle(bundle_path).map_err(|e| invalid(e.to_string()))?;
    let root = bundle.root_net();
    let (places, transitions) = match &**root {
        NetDef::Flat(n) => (n.places().len(), n.transitions().len()),
        NetDef::Guarded(g) => (g.base().places().len(), g.base().transitions().len()),
        NetDef::Hierarchical(h) => (h.parent().places().len(), h.parent().transitions().len()),
    };
    if as_json {
        println!(
            "{}",
            json!({
                "nets": bundle.nets().len(),
                "root": bundle.root(),
                "kind": root.kind(),
                "places": places,
                "transitions": transitions,
            })
        );
    } else {
        println!(
            "ok: root `{}` is a {} net with {places} places and {transitions} transitions \
             ({} net(s) in the bundle)",
            bundle.root(),
            root.kind(),
            bundle.nets().len(),
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Prints a resulting contract-or-net state and succeeds.
fn print_state(state: &ContractState, as_json: bool) -> Result<ExitCode, Failure> {
    if as_json {
        let value = serde_json::to_value(state).expect("states serialize infallibly");
        println!("{}", json!({ "state": value }));
    } else {
        match state {
            ContractState::Marking(m) => println!("{m}"),
            ContractState::Guarded(gm) => println!("{gm}"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fire(
    bundle_path: &Path,
    marking_path: &Path,
    transition: &str,
    witness_path: Option<&Path>,
    as_json: bool,
) -> Result<ExitCode, Failure> {
    match &*load_root(bundle_path)? {
        NetDef::Flat(net) => {
            if witness_path.is_some() {
                return Err(invalid("flat nets take no --witness"));
            }
            let m: Marking = read_json(marking_path, "marking file")?;
            net.validate_marking(&m).map_err(|e| invalid(e.to_string()))?;
            let next = net.fire(&m, transition).map_err(rejected)?;
            print_state(&ContractState::Marking(next), as_json)
        }
        NetDef::Guarded(g) => {
            let gm: GuardedMarking = read_json(marking_path, "marking file")?;
            g.validate_marking(&gm).map_err(|e| invalid(e.to_string()))?;
            let witness_path = witness_path.ok_or_else(|| {
                invalid("guarded nets need --witness (a span apex element as a JSON string)")
            })?;
            let witness: String = read_json(witness_path, "witness file")?;
            let next = g.fire(&gm, transition, &witness).map_err(rejected)?;
            print_state(&ContractState::Guarded(next), as_json)
        }
        NetDef::Hierarchical(h) => {
            let m: Marking = read_json(marking_path, "marking file")?;
            h.parent().validate_marking(&m).map_err(|e| invalid(e.to_string()))?;
            let witness_path = witness_path.ok_or_else(|| {
                invalid("hierarchical nets need --witness (an {a, x, b} object)")
            })?;
            let witness: Witness = read_json(witness_path, "witness file")?;
            let next = h.fire(&m, transition, &witness).map_err(rejected)?;
            print_state(&ContractState::Marking(next), as_json)
        }
    }
}

/// The run file format for guarded nets: witnessed steps over a stateful
/// start.
#[derive(Deserialize)]
struct GuardedRun {
    start: GuardedMarking,
    steps: Vec<GuardedRunStep>,
}

#[derive(Deserialize)]
struct GuardedRunStep {
    transition: String,
    witness: String,
}

fn replay(bundle_path: &Path, execution_path: &Path, as_json: bool) -> Result<ExitCode, Failure> {
    match &*load_root(bundle_path)? {
        NetDef::Flat(net) => {
            let e: Execution = read_json(execution_path, "run file")?;
            net.validate_marking(&e.start).map_err(|err| invalid(err.to_string()))?;
            let end = net.replay(&e).map_err(rejected)?;
            print_state(&ContractState::Marking(end), as_json)
        }
        NetDef::Guarded(g) => {
            let run: GuardedRun = read_json(execution_path, "run file")?;
            g.validate_marking(&run.start).map_err(|e| invalid(e.to_string()))?;
            let mut gm = run.start;
            for (i, step) in run.steps.iter().enumerate() {
                gm = g
                    .fire(&gm, &step.transition, &step.witness)
                    .map_err(|e| Failure::Rejected(format!("step {i}: {e}")))?;
            }
            print_state(&ContractState::Guarded(gm), as_json)
        }
        NetDef::Hierarchical(h) => {
            let e: HierExecution = read_json(execution_path, "run file")?;
            h.parent().validate_marking(&e.start).map_err(|err| invalid(err.to_string()))?;
            let end = h.replay(&e).map_err(rejected)?;
            print_state(&ContractState::Marking(end), as_json)
        }
    }
}

fn internalize(
    bundle_path: &Path,
    child_bound: usize,
    out_path: &Path,
    pnml_path: Option<&Path>,
    as_json: bool,
) -> Result<ExitCode, Failure> {
    let internal = match &*load_root(bundle_path)? {
        NetDef::Flat(_) => {
            return Err(invalid("the root net is already flat; nothing to internalize"))
        }
        NetDef::Guarded(g) => g.internalize().map_err(|e| invalid(e.to_string()))?,
        NetDef::Hierarchical(h) => h.internalize(child_bound).map_err(|e| invalid(e.to_string()))?,
    };
    let mut text = serde_json::to_string_pretty(&internal).expect("nets serialize infallibly");
    text.push('\n');
    fs::write(out_path, text).map_err(|e| invalid(format!("{}: {e}", out_path.display())))?;
    if let Some(pnml_path) = pnml_path {
        export_pnml(internal.net(), &Marking::new(), pnml_path)
            .map_err(|e| invalid(e.to_string()))?;
    }
    let places = internal.net().places().len();
    let transitions = internal.net().transitions().len();
    if as_json {
        println!(
            "{}",
            json!({
                "out": out_path.display().to_string(),
                "places": places,
                "transitions": transitions,
                "pnml": pnml_path.map(|p| p.display().to_string()),
            })
        );
    } else {
        let pnml_note = match pnml_path {
            Some(p) => format!("; PNML at {}", p.display()),
            None => String::new(),
        };
        println!("wrote {}: {places} places, {transitions} transitions{pnml_note}", out_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn reach(
    bundle_path: &Path,
    from_path: &Path,
    to_path: &Path,
    bound: usize,
    child_bound: Option<usize>,
    as_json: bool,
) -> Result<ExitCode, Failure> {
    let root = load_root(bundle_path)?;
    if child_bound.is_some() && !matches!(&*root, NetDef::Hierarchical(_)) {
        return Err(invalid("--child-bound only applies to hierarchical bundles"));
    }
    let found = match &*root {
        NetDef::Flat(net) => {
            let from: Marking = read_json(from_path, "start marking")?;
            let to: Marking = read_json(to_path, "target marking")?;
            net.validate_marking(&from).map_err(|e| invalid(e.to_string()))?;
            net.validate_marking(&to).map_err(|e| invalid(e.to_string()))?;
            net.reachable_bounded(&from, &to, bound)
        }
        NetDef::Guarded(g) => {
            let from: GuardedMarking = read_json(from_path, "start marking")?;
            let to: GuardedMarking = read_json(to_path, "target marking")?;
            g.validate_marking(&from).map_err(|e| invalid(e.to_string()))?;
            g.validate_marking(&to).map_err(|e| invalid(e.to_string()))?;
            g.lift_reachability(&from, &to, bound).map_err(|e| invalid(e.to_string()))?
        }
        NetDef::Hierarchical(h) => {
            let child_bound = child_bound.ok_or_else(|| {
                invalid("hierarchical nets need --child-bound K (maximum child-run length)")
            })?;
            let from: GuardedMarking = read_json(from_path, "start marking")?;
            let to: GuardedMarking = read_json(to_path, "target marking")?;
            let internal = h.internalize(child_bound).map_err(|e| invalid(e.to_string()))?;
            let from = internal.encode_boundary_marking(h, &from).map_err(|e| invalid(e.to_string()))?;
            let to = internal.encode_boundary_marking(h, &to).map_err(|e| invalid(e.to_string()))?;
            internal.net().reachable_bounded(&from, &to, bound)
        }
    };
    match found {
        Some(e) => {
            if as_json {
                println!(
                    "{}",
                    json!({ "reachable": true, "length": e.steps.len(), "steps": e.steps })
                );
            } else {
                println!("[{}]", e.steps.join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
        None => {
            if as_json {
                println!("{}", json!({ "reachable": false, "bound": bound }));
            } else {
                println!("not reachable within bound {bound}");
            }
            Ok(ExitCode::from(1))
        }
    }
}

/// Rebuilds a ledger from its log file, or starts a fresh one if the file
/// does not exist yet.
fn open_ledger(path: &Path, policy: ChildStatePolicy) -> Result<Ledger, Failure> {
    match fs::read_to_string(path) {
        Ok(text) => {
            let records = records_from_jsonl(&text)
                .map_err(|e| invalid(format!("ledger {}: {e}", path.display())))?;
            Ledger::replay_log(&records, policy)
                .map_err(|e| invalid(format!("ledger {}: {e}", path.display())))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Ledger::new(policy)),
        Err(e) => Err(invalid(format!("ledger {}: {e}", path.display()))),
    }
}

fn print_record(record: &LogRecord, as_json: bool) {
    if as_json {
        println!("{}", serde_json::to_string(record).expect("records serialize infallibly"));
        return;
    }
    match &record.outcome {
        Outcome::Registered { address } => println!("{}: registered {address}", record.seq),
        Outcome::Accepted { state } => match state {
            ContractState::Marking(m) => println!("{}: accepted; state {m}", record.seq),
            ContractState::Guarded(gm) => println!("{}: accepted; state {gm}", record.seq),
        },
        Outcome::Rejected { reason } => println!("{}: rejected: {reason}", record.seq),
    }
}

fn simulate(
    ledger_path: &Path,
    script_path: &Path,
    policy: ChildStatePolicy,
    as_json: bool,
) -> Result<ExitCode, Failure> {
    let text = fs::read_to_string(script_path)
        .map_err(|e| invalid(format!("script {}: {e}", script_path.display())))?;
    let mut messages = Vec::new();
    for (at, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let msg: Message = serde_json::from_str(line)
            .map_err(|e| invalid(format!("{}:{}: {e}", script_path.display(), at + 1)))?;
        messages.push(msg);
    }

    let mut ledger = open_ledger(ledger_path, policy)?;
    let mut new_records = Vec::new();
    let mut any_rejected = false;
    for msg in messages {
        let record = ledger.submit(msg);
        any_rejected |= matches!(record.outcome, Outcome::Rejected { .. });
        print_record(&record, as_json);
        new_records.push(record);
    }

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(ledger_path)
        .map_err(|e| invalid(format!("ledger {}: {e}", ledger_path.display())))?;
    file.write_all(records_to_jsonl(&new_records).as_bytes())
        .map_err(|e| invalid(format!("ledger {}: {e}", ledger_path.display())))?;

    Ok(if any_rejected { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn serve(ledger_path: &Path, policy: ChildStatePolicy) -> Result<ExitCode, Failure> {
    let mut ledger = open_ledger(ledger_path, policy)?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(ledger_path)
        .map_err(|e| invalid(format!("ledger {}: {e}", ledger_path.display())))?;
    let stdin = io::stdin().lock();
    let mut out = io::stdout().lock();
    for line in stdin.lines() {
        let line = line.map_err(|e| invalid(format!("standard input: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Message>(&line) {
            Ok(msg) => {
                let record = ledger.submit(msg);
                writeln!(file, "{}", serde_json::to_string(&record).expect("records serialize"))
                    .and_then(|()| file.flush())
                    .map_err(|e| invalid(format!("ledger {}: {e}", ledger_path.display())))?;
                writeln!(out, "{}", serde_json::to_string(&record.outcome).expect("outcomes serialize"))
                    .and_then(|()| out.flush())
                    .map_err(|e| invalid(format!("standard output: {e}")))?;
            }
            Err(e) => {
                writeln!(out, "{}", json!({ "error": format!("malformed message: {e}") }))
                    .and_then(|()| out.flush())
                    .map_err(|err| invalid(format!("standard output: {err}")))?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
