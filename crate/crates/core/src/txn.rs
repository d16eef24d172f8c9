//! An append-only ledger of net contracts with atomic, deterministic
//! transaction processing.
//!
//! A contract is a net definition living at a short hash-derived address
//! together with its current marking. Messages either register new
//! contracts (`command = "register"`) or ask a contract to fire a
//! transition; hierarchical contracts forward the witness's child run to
//! the registered child contract as a synchronous sub-call, recursively.
//! Every submission appends one log record; on any failure the whole call
//! tree reverts to its pre-transaction state, so rejected transactions
//! change nothing.
//!
//! The engine is a single-writer state machine: submissions are processed
//! strictly serially, and replaying the log from genesis under the same
//! child-state policy reproduces every contract state bit for bit.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bundle;
use crate::guarded::GuardedMarking;
use crate::hier::{BoundarySide, ChildRun, NetDef, Witness};
use crate::net::Marking;

/// A transaction request: `command` is `"register"` or a transition id;
/// `data` carries the registration payload, a guarded witness id, or a
/// hierarchical witness as JSON (empty for flat firings).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    #[serde(default)]
    pub from: String,
    #[serde(default)]
    pub to: String,
    pub command: String,
    #[serde(default)]
    pub data: String,
}

/// The state a contract holds between transactions: a plain marking for
/// flat and hierarchical nets, a marking with token states for guarded
/// nets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContractState {
    Marking(Marking),
    Guarded(GuardedMarking),
}

/// A net definition installed at an address, with its current state and
/// the addresses of the child contracts its transitions forward to.
#[derive(Debug, Clone)]
pub struct Contract {
    address: String,
    def: Arc<NetDef>,
    state: ContractState,
    child_addresses: BTreeMap<String, String>,
}

impl Contract {
    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn def(&self) -> &Arc<NetDef> {
        &self.def
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    /// Child contract address per transition (hierarchical contracts only).
    pub fn child_addresses(&self) -> &BTreeMap<String, String> {
        &self.child_addresses
    }
}

/// What a submission did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Accepted { state: ContractState },
    Rejected { reason: String },
    Registered { address: String },
}

/// One line of the ledger log: the message, what it did, and a hash of
/// every contract state after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub msg: Message,
    pub outcome: Outcome,
    pub state_hash: String,
}

/// How a hierarchical firing treats the child contract's stored state.
///
/// `Persistent` requires the child's current marking to equal the play
/// marking selected by the witness, so runs chain through the child's
/// stored state. `Reset` overwrites the child with the play marking first,
/// which makes the engine agree exactly with the stateless hierarchical
/// firing rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChildStatePolicy {
    Reset,
    #[default]
    Persistent,
}

/// Why a registration was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("registration rejected: {0}")]
pub struct RegisterError(pub String);

/// Why a log could not be replayed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("record {at}: expected sequence number {expected}, found {found}")]
    SequenceGap { at: usize, expected: u64, found: u64 },
    #[error("record {at}: replay disagrees with the recorded outcome: {message}")]
    OutcomeMismatch { at: usize, message: String },
    #[error("record {at}: replay disagrees with the recorded state hash")]
    HashMismatch { at: usize },
}

/// The registration payload carried in a `"register"` message's data.
#[derive(Debug, Serialize, Deserialize)]
struct RegistrationData {
    def: serde_json::Value,
    #[serde(default)]
    children: BTreeMap<String, String>,
    initial: serde_json::Value,
}

fn short_address(def_json: &str, index: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(def_json.as_bytes());
    hasher.update(b":");
    hasher.update(index.to_string().as_bytes());
    hex::encode(hasher.finalize())[..10].to_string()
}

fn canonical_def_json(def: &NetDef) -> String {
    serde_json::to_string(def).expect("net definitions serialize infallibly")
}

/// The contract table and its append-only log.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    policy: ChildStatePolicy,
    contracts: BTreeMap<String, Contract>,
    log: Vec<LogRecord>,
}

impl Ledger {
    pub fn new(policy: ChildStatePolicy) -> Self {
        Ledger { policy, contracts: BTreeMap::new(), log: Vec::new() }
    }

    pub fn policy(&self) -> ChildStatePolicy {
        self.policy
    }

    pub fn contracts(&self) -> &BTreeMap<String, Contract> {
        &self.contracts
    }

    pub fn contract(&self, address: &str) -> Option<&Contract> {
        self.contracts.get(address)
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Hash of every contract state, keyed by address; the log stores one
    /// per record so replays can be checked bit for bit.
    pub fn state_hash(&self) -> String {
        let states: BTreeMap<&String, &ContractState> =
            self.contracts.iter().map(|(address, c)| (address, &c.state)).collect();
        let json = serde_json::to_string(&states).expect("states serialize infallibly");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Processes one message, appends a record, and returns it. Never
    /// fails: any error becomes a `Rejected` outcome, and rejected
    /// submissions leave every contract state untouched.
    pub fn submit(&mut self, msg: Message) -> LogRecord {
        let snapshot = self.contracts.clone();
        let outcome = match self.apply(&msg) {
            Ok(outcome) => outcome,
            Err(reason) => {
                self.contracts = snapshot;
                Outcome::Rejected { reason }
            }
        };
        let record = LogRecord {
            seq: self.log.len() as u64 + 1,
            msg,
            outcome,
            state_hash: self.state_hash(),
        };
        self.log.push(record.clone());
        record
    }

    /// Registers `def` as a new contract and returns its address. For
    /// hierarchical definitions, `children` must map every transition to
    /// the address of an already-registered contract whose definition
    /// equals the bound child. The registration is logged as a submission,
    /// so replaying the log re-creates the contract.
    pub fn register(
        &mut self,
        def: &NetDef,
        children: &BTreeMap<String, String>,
        initial: &ContractState,
    ) -> Result<String, RegisterError> {
        let data = RegistrationData {
            def: serde_json::to_value(def).expect("net definitions serialize infallibly"),
            children: children.clone(),
            initial: serde_json::to_value(initial).expect("states serialize infallibly"),
        };
        let msg = Message {
            from: String::new(),
            to: String::new(),
            command: "register".to_string(),
            data: serde_json::to_string(&data).expect("payload serializes infallibly"),
        };
        match self.submit(msg).outcome {
            Outcome::Registered { address } => Ok(address),
            Outcome::Rejected { reason } => Err(RegisterError(reason)),
            Outcome::Accepted { .. } => unreachable!("registration never fires a transition"),
        }
    }

    /// Rebuilds a ledger by re-submitting every logged message, checking
    /// each recorded outcome and state hash along the way. The policy must
    /// match the one the log was produced under.
    pub fn replay_log(records: &[LogRecord], policy: ChildStatePolicy) -> Result<Ledger, LogError> {
        let mut ledger = Ledger::new(policy);
        for (at, expected) in records.iter().enumerate() {
            let seq = at as u64 + 1;
            if expected.seq != seq {
                return Err(LogError::SequenceGap { at, expected: seq, found: expected.seq });
            }
            let replayed = ledger.submit(expected.msg.clone());
            if replayed.outcome != expected.outcome {
                return Err(LogError::OutcomeMismatch {
                    at,
                    message: format!(
                        "recorded {}, replayed {}",
                        serde_json::to_string(&expected.outcome).expect("outcomes serialize"),
                        serde_json::to_string(&replayed.outcome).expect("outcomes serialize"),
                    ),
                });
            }
            if replayed.state_hash != expected.state_hash {
                return Err(LogError::HashMismatch { at });
            }
        }
        Ok(ledger)
    }

    fn apply(&mut self, msg: &Message) -> Result<Outcome, String> {
        if msg.command == "register" {
            let data: RegistrationData = serde_json::from_str(&msg.data)
                .map_err(|e| format!("registration data is malformed: {e}"))?;
            let address = self.apply_registration(&data)?;
            return Ok(Outcome::Registered { address });
        }

        let contract = self
            .contracts
            .get(&msg.to)
            .ok_or_else(|| format!("unknown address `{}`", msg.to))?;
        let def = contract.def.clone();
        match &*def {
            NetDef::Flat(net) => {
                if !msg.data.is_empty() {
                    return Err("flat contracts take no transaction data".to_string());
                }
                let ContractState::Marking(m) = &contract.state else {
                    return Err("flat contract state must be a plain marking".to_string());
                };
                let next = net.fire(m, &msg.command).map_err(|e| e.to_string())?;
                let state = ContractState::Marking(next);
                self.contracts.get_mut(&msg.to).expect("contract exists").state = state.clone();
                Ok(Outcome::Accepted { state })
            }
            NetDef::Guarded(net) => {
                let ContractState::Guarded(gm) = &contract.state else {
                    return Err("guarded contract state must carry token states".to_string());
                };
                let next = net.fire(gm, &msg.command, &msg.data).map_err(|e| e.to_string())?;
                let state = ContractState::Guarded(next);
                self.contracts.get_mut(&msg.to).expect("contract exists").state = state.clone();
                Ok(Outcome::Accepted { state })
            }
            NetDef::Hierarchical(_) => {
                let witness: Witness = serde_json::from_str(&msg.data)
                    .map_err(|e| format!("transaction data is not a witness: {e}"))?;
                self.fire_hier_contract(&msg.to, &msg.command, &witness)?;
                let state = self.contracts[&msg.to].state.clone();
                Ok(Outcome::Accepted { state })
            }
        }
    }

    fn apply_registration(&mut self, data: &RegistrationData) -> Result<String, String> {
        let def = bundle::net_from_value(&data.def)
            .map_err(|e| format!("invalid definition: {e}"))?;
        let initial: ContractState = serde_json::from_value(data.initial.clone())
            .map_err(|e| format!("invalid initial state: {e}"))?;

        match &def {
            NetDef::Hierarchical(h) => {
                for t in h.parent().transitions() {
                    let address = data
                        .children
                        .get(&t.id)
                        .ok_or_else(|| format!("no child address for transition `{}`", t.id))?;
                    let registered = self.contracts.get(address).ok_or_else(|| {
                        format!("dangling child reference `{address}` for transition `{}`", t.id)
                    })?;
                    let bound = &h.binding(&t.id).expect("bindings are total").child;
                    if canonical_def_json(&registered.def) != canonical_def_json(bound) {
                        return Err(format!(
                            "contract at `{address}` does not match the child bound to `{}`",
                            t.id
                        ));
                    }
                }
                for key in data.children.keys() {
                    if h.parent().transition(key).is_none() {
                        return Err(format!("child address given for unknown transition `{key}`"));
                    }
                }
            }
            _ => {
                if !data.children.is_empty() {
                    return Err("child addresses given for a net without children".to_string());
                }
            }
        }

        match (&def, &initial) {
            (NetDef::Flat(net), ContractState::Marking(m)) => {
                net.validate_marking(m).map_err(|e| e.to_string())?
            }
            (NetDef::Hierarchical(h), ContractState::Marking(m)) => {
                h.parent().validate_marking(m).map_err(|e| e.to_string())?
            }
            (NetDef::Guarded(net), ContractState::Guarded(gm)) => {
                net.validate_marking(gm).map_err(|e| e.to_string())?
            }
            (NetDef::Guarded(_), ContractState::Marking(_)) => {
                return Err("guarded contracts need token states in their initial state".to_string())
            }
            (_, ContractState::Guarded(_)) => {
                return Err("only guarded contracts carry token states".to_string())
            }
        }

        let address = short_address(&canonical_def_json(&def), self.contracts.len());
        if self.contracts.contains_key(&address) {
            return Err(format!("address collision at `{address}`"));
        }
        self.contracts.insert(
            address.clone(),
            Contract {
                address: address.clone(),
                def: Arc::new(def),
                state: initial,
                child_addresses: data.children.clone(),
            },
        );
        Ok(address)
    }

    /// Fires one transition of a hierarchical contract: validates the
    /// witness's boundary assignments, applies the child-state policy,
    /// replays the child run on the child contract (recursively), checks
    /// the stop marking, and advances the parent. State changes are
    /// committed in place; the caller's snapshot undoes them on failure.
    fn fire_hier_contract(
        &mut self,
        address: &str,
        transition: &str,
        witness: &Witness,
    ) -> Result<(), String> {
        let contract =
            self.contracts.get(address).ok_or_else(|| format!("unknown address `{address}`"))?;
        let def = contract.def.clone();
        let child_address = contract.child_addresses.get(transition).cloned();
        let NetDef::Hierarchical(h) = &*def else {
            return Err(format!("contract `{address}` is not hierarchical"));
        };
        let ContractState::Marking(m) = contract.state.clone() else {
            return Err("hierarchical contract state must be a plain marking".to_string());
        };

        let t = h
            .parent()
            .transition(transition)
            .ok_or_else(|| format!("unknown transition `{transition}`"))?;
        if !m.covers(&t.pre) {
            return Err(format!("transition `{transition}` is not enabled"));
        }
        let binding = h.binding(transition).expect("bindings are total");
        let play_marking = binding.play.get(&witness.a).ok_or_else(|| {
            format!("`{}` is not a boundary assignment in the {} table", witness.a, BoundarySide::Play)
        })?;
        let stop_marking = binding.stop.get(&witness.b).ok_or_else(|| {
            format!("`{}` is not a boundary assignment in the {} table", witness.b, BoundarySide::Stop)
        })?;
        if witness.x.start() != play_marking {
            return Err("child run does not start at the play marking".to_string());
        }

        let child_address =
            child_address.ok_or_else(|| format!("no child contract for `{transition}`"))?;
        {
            let child = self
                .contracts
                .get_mut(&child_address)
                .ok_or_else(|| format!("child contract `{child_address}` is not registered"))?;
            let ContractState::Marking(child_state) = &child.state else {
                return Err("child contract state must be a plain marking".to_string());
            };
            match self.policy {
                ChildStatePolicy::Persistent => {
                    if child_state != play_marking {
                        return Err(format!(
                            "child state does not match the play marking of `{}`",
                            witness.a
                        ));
                    }
                }
                ChildStatePolicy::Reset => {
                    child.state = ContractState::Marking(play_marking.clone());
                }
            }
        }

        let end = self.replay_run(&child_address, &witness.x)?;
        if end != *stop_marking {
            return Err("child run does not end at the stop marking".to_string());
        }

        let next = h.parent().fire(&m, transition).expect("enabledness was checked");
        self.contracts.get_mut(address).expect("contract exists").state =
            ContractState::Marking(next);
        Ok(())
    }

    /// Replays a child run against the contract at `address`, committing
    /// its state step by step and returning the final marking. Empty runs
    /// fit contracts of either kind.
    fn replay_run(&mut self, address: &str, run: &ChildRun) -> Result<Marking, String> {
        let contract =
            self.contracts.get(address).ok_or_else(|| format!("unknown address `{address}`"))?;
        let def = contract.def.clone();
        let ContractState::Marking(current) = contract.state.clone() else {
            return Err("child contract state must be a plain marking".to_string());
        };
        if run.start() != &current {
            return Err("child run does not start at the child's current state".to_string());
        }
        if run.is_empty() {
            return Ok(current);
        }
        match (&*def, run) {
            (NetDef::Flat(net), ChildRun::Flat(execution)) => {
                let end = net.replay(execution).map_err(|e| e.to_string())?;
                self.contracts.get_mut(address).expect("contract exists").state =
                    ContractState::Marking(end.clone());
                Ok(end)
            }
            (NetDef::Hierarchical(_), ChildRun::Hier(execution)) => {
                for (step, s) in execution.steps.iter().enumerate() {
                    self.fire_hier_contract(address, &s.transition, &s.witness)
                        .map_err(|e| format!("step {step}: {e}"))?;
                }
                let ContractState::Marking(end) = self.contracts[address].state.clone() else {
                    unreachable!("hierarchical contracts hold plain markings");
                };
                Ok(end)
            }
            (NetDef::Guarded(_), _) => {
                Err("guarded contracts cannot replay child runs".to_string())
            }
            _ => Err("child run kind does not match the child contract".to_string()),
        }
    }
}

/// Renders log records as newline-delimited JSON, one record per line.
pub fn records_to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records serialize infallibly"));
        out.push('\n');
    }
    out
}

/// Parses newline-delimited JSON log records, skipping blank lines.
pub fn records_from_jsonl(text: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::hier::{HierExecution, HierStep};
    use crate::multiset::Multiset;
    use crate::net::{Execution, PetriNet, Transition};

    fn ms(pairs: &[(&str, u64)]) -> Multiset {
        Multiset::from_pairs(pairs.iter().map(|&(s, n)| (s, n)))
    }

    /// c --u1--> d --u2--> e
    fn chain_child() -> NetDef {
        NetDef::Flat(
            PetriNet::new(
                vec!["c", "d", "e"],
                vec![
                    Transition::new("u1", ms(&[("c", 1)]), ms(&[("d", 1)])),
                    Transition::new("u2", ms(&[("d", 1)]), ms(&[("e", 1)])),
                ],
            )
            .unwrap(),
        )
    }

    /// P1 --t1--> P2 with t1 delegating to the chain child.
    fn chain_parent(child: Arc<NetDef>) -> NetDef {
        use crate::hier::ChildBinding;
        use crate::span::FiniteSet;
        let parent = PetriNet::new(
            vec!["P1", "P2"],
            vec![Transition::new("t1", ms(&[("P1", 1)]), ms(&[("P2", 1)]))],
        )
        .unwrap();
        NetDef::Hierarchical(
            crate::hier::HierarchicalNet::new(
                parent,
                BTreeMap::from([
                    ("P1".to_string(), FiniteSet::new(vec!["i"]).unwrap()),
                    ("P2".to_string(), FiniteSet::new(vec!["o"]).unwrap()),
                ]),
                BTreeMap::from([(
                    "t1".to_string(),
                    ChildBinding {
                        child,
                        play: BTreeMap::from([("(i)".to_string(), ms(&[("c", 1)]))]),
                        stop: BTreeMap::from([("(o)".to_string(), ms(&[("e", 1)]))]),
                    },
                )]),
            )
            .unwrap(),
        )
    }

    fn flat_run(start: Marking, steps: &[&str]) -> ChildRun {
        ChildRun::Flat(Execution::new(start, steps.iter().map(|s| s.to_string()).collect()))
    }

    fn witness(a: &str, x: ChildRun, b: &str) -> Witness {
        Witness { a: a.to_string(), x, b: b.to_string() }
    }

    fn fire_msg(to: &str, command: &str, data: String) -> Message {
        Message { from: "user".to_string(), to: to.to_string(), command: command.to_string(), data }
    }

    /// Registers the chain child and its parent; returns (ledger, parent
    /// address, child address).
    fn chain_session(policy: ChildStatePolicy, parent_tokens: u64) -> (Ledger, String, String) {
        let mut ledger = Ledger::new(policy);
        let child_addr = ledger
            .register(&chain_child(), &BTreeMap::new(), &ContractState::Marking(ms(&[("c", 1)])))
            .unwrap();
        let parent = chain_parent(Arc::new(chain_child()));
        let parent_addr = ledger
            .register(
                &parent,
                &BTreeMap::from([("t1".to_string(), child_addr.clone())]),
                &ContractState::Marking(ms(&[("P1", parent_tokens)])),
            )
            .unwrap();
        (ledger, parent_addr, child_addr)
    }

    fn two_step_witness_data() -> String {
        let w = witness("(i)", flat_run(ms(&[("c", 1)]), &["u1", "u2"]), "(o)");
        serde_json::to_string(&w).unwrap()
    }

    #[test]
    fn addresses_are_ten_hex_characters_and_deterministic() {
        let (ledger, parent_addr, child_addr) = chain_session(ChildStatePolicy::Persistent, 1);
        for address in [&parent_addr, &child_addr] {
            assert_eq!(address.len(), 10);
            assert!(address.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        }
        let (ledger2, parent2, child2) = chain_session(ChildStatePolicy::Persistent, 1);
        assert_eq!(parent_addr, parent2);
        assert_eq!(child_addr, child2);
        assert_eq!(ledger.state_hash(), ledger2.state_hash());
    }

    #[test]
    fn registering_the_same_definition_twice_gives_distinct_addresses() {
        let mut ledger = Ledger::default();
        let initial = ContractState::Marking(ms(&[("c", 1)]));
        let first = ledger.register(&chain_child(), &BTreeMap::new(), &initial).unwrap();
        let second = ledger.register(&chain_child(), &BTreeMap::new(), &initial).unwrap();
        assert_ne!(first, second);
    }

    #[test]
    fn flat_contracts_fire_by_command() {
        let mut ledger = Ledger::default();
        let addr = ledger
            .register(&chain_child(), &BTreeMap::new(), &ContractState::Marking(ms(&[("c", 1)])))
            .unwrap();
        let record = ledger.submit(fire_msg(&addr, "u1", String::new()));
        assert_eq!(
            record.outcome,
            Outcome::Accepted { state: ContractState::Marking(ms(&[("d", 1)])) }
        );
        let record = ledger.submit(fire_msg(&addr, "u1", String::new()));
        let Outcome::Rejected { reason } = record.outcome else { panic!("expected rejection") };
        assert!(reason.contains("not enabled"), "unexpected reason: {reason}");
    }

    #[test]
    fn messages_to_unknown_addresses_are_rejected() {
        let mut ledger = Ledger::default();
        let before = ledger.state_hash();
        let record = ledger.submit(fire_msg("0000000000", "t", String::new()));
        let Outcome::Rejected { reason } = record.outcome else { panic!("expected rejection") };
        assert!(reason.contains("unknown address"));
        assert_eq!(record.state_hash, before);
    }

    #[test]
    fn guarded_contracts_fire_with_witness_data() {
        let net = crate::guarded::tests::colored_chain();
        let mut ledger = Ledger::default();
        let initial = ContractState::Guarded(GuardedMarking::new(ms(&[("L", 1)]), vec!["blue"]));
        let addr = ledger
            .register(&NetDef::Guarded(net), &BTreeMap::new(), &initial)
            .unwrap();
        let record = ledger.submit(fire_msg(&addr, "go", "s1".to_string()));
        let Outcome::Accepted { state: ContractState::Guarded(gm) } = record.outcome else {
            panic!("expected guarded acceptance");
        };
        assert_eq!(gm.state, vec!["green"]);
        // s2 consumes a red token, which this contract does not hold.
        let record = ledger.submit(fire_msg(&addr, "emit", "s2".to_string()));
        assert!(matches!(record.outcome, Outcome::Rejected { .. }));
    }

    #[test]
    fn hierarchical_firing_advances_parent_and_child() {
        let (mut ledger, parent_addr, child_addr) = chain_session(ChildStatePolicy::Persistent, 1);
        let record = ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
        assert_eq!(
            record.outcome,
            Outcome::Accepted { state: ContractState::Marking(ms(&[("P2", 1)])) }
        );
        assert_eq!(
            ledger.contract(&child_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("e", 1)]))
        );
    }

    #[test]
    fn rejected_transactions_leave_every_state_byte_identical() {
        let (mut ledger, parent_addr, child_addr) = chain_session(ChildStatePolicy::Persistent, 1);
        let before_hash = ledger.state_hash();
        let before_child = ledger.contract(&child_addr).unwrap().state().clone();
        let before_parent = ledger.contract(&parent_addr).unwrap().state().clone();

        // u2 is not enabled at the play marking {c: 1}.
        let w = witness("(i)", flat_run(ms(&[("c", 1)]), &["u2"]), "(o)");
        let record =
            ledger.submit(fire_msg(&parent_addr, "t1", serde_json::to_string(&w).unwrap()));
        let Outcome::Rejected { reason } = &record.outcome else { panic!("expected rejection") };
        assert!(reason.contains("u2"), "unexpected reason: {reason}");
        assert_eq!(record.state_hash, before_hash);
        assert_eq!(ledger.contract(&child_addr).unwrap().state(), &before_child);
        assert_eq!(ledger.contract(&parent_addr).unwrap().state(), &before_parent);
    }

    #[test]
    fn persistent_policy_requires_the_child_to_sit_at_the_play_marking() {
        let (mut ledger, parent_addr, _) = chain_session(ChildStatePolicy::Persistent, 2);
        let first = ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
        assert!(matches!(first.outcome, Outcome::Accepted { .. }));
        // The child now rests at {e: 1}, not at the play marking {c: 1}.
        let second = ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
        let Outcome::Rejected { reason } = second.outcome else { panic!("expected rejection") };
        assert!(reason.contains("child state"), "unexpected reason: {reason}");
    }

    #[test]
    fn reset_policy_matches_the_stateless_firing_rule() {
        let (mut ledger, parent_addr, child_addr) = chain_session(ChildStatePolicy::Reset, 2);
        for _ in 0..2 {
            let record = ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
            assert!(matches!(record.outcome, Outcome::Accepted { .. }));
        }
        assert_eq!(
            ledger.contract(&parent_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("P2", 2)]))
        );
        assert_eq!(
            ledger.contract(&child_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("e", 1)]))
        );
        // The same witness fires statelessly on the definition.
        let NetDef::Hierarchical(h) = chain_parent(Arc::new(chain_child())) else { unreachable!() };
        let w: Witness = serde_json::from_str(&two_step_witness_data()).unwrap();
        assert!(h.fire(&ms(&[("P1", 1)]), "t1", &w).is_ok());
    }

    #[test]
    fn nested_hierarchies_forward_recursively_and_roll_back_together() {
        // leaf: c --u--> d; mid delegates tm to leaf; top delegates T to mid.
        use crate::hier::ChildBinding;
        use crate::span::FiniteSet;

        let leaf = NetDef::Flat(
            PetriNet::new(
                vec!["c", "d"],
                vec![Transition::new("u", ms(&[("c", 1)]), ms(&[("d", 1)]))],
            )
            .unwrap(),
        );
        let mid = NetDef::Hierarchical(
            crate::hier::HierarchicalNet::new(
                PetriNet::new(
                    vec!["M1", "M2"],
                    vec![Transition::new("tm", ms(&[("M1", 1)]), ms(&[("M2", 1)]))],
                )
                .unwrap(),
                BTreeMap::from([
                    ("M1".to_string(), FiniteSet::new(vec!["i"]).unwrap()),
                    ("M2".to_string(), FiniteSet::new(vec!["o"]).unwrap()),
                ]),
                BTreeMap::from([(
                    "tm".to_string(),
                    ChildBinding {
                        child: Arc::new(leaf.clone()),
                        play: BTreeMap::from([("(i)".to_string(), ms(&[("c", 1)]))]),
                        stop: BTreeMap::from([("(o)".to_string(), ms(&[("d", 1)]))]),
                    },
                )]),
            )
            .unwrap(),
        );
        let top = NetDef::Hierarchical(
            crate::hier::HierarchicalNet::new(
                PetriNet::new(
                    vec!["A1", "A2"],
                    vec![Transition::new("T", ms(&[("A1", 1)]), ms(&[("A2", 1)]))],
                )
                .unwrap(),
                BTreeMap::from([
                    ("A1".to_string(), FiniteSet::new(vec!["i"]).unwrap()),
                    ("A2".to_string(), FiniteSet::new(vec!["o"]).unwrap()),
                ]),
                BTreeMap::from([(
                    "T".to_string(),
                    ChildBinding {
                        child: Arc::new(mid.clone()),
                        play: BTreeMap::from([("(i)".to_string(), ms(&[("M1", 1)]))]),
                        stop: BTreeMap::from([("(o)".to_string(), ms(&[("M2", 1)]))]),
                    },
                )]),
            )
            .unwrap(),
        );

        let mut ledger = Ledger::default();
        let leaf_addr = ledger
            .register(&leaf, &BTreeMap::new(), &ContractState::Marking(ms(&[("c", 1)])))
            .unwrap();
        let mid_addr = ledger
            .register(
                &mid,
                &BTreeMap::from([("tm".to_string(), leaf_addr.clone())]),
                &ContractState::Marking(ms(&[("M1", 1)])),
            )
            .unwrap();
        let top_addr = ledger
            .register(
                &top,
                &BTreeMap::from([("T".to_string(), mid_addr.clone())]),
                &ContractState::Marking(ms(&[("A1", 1)])),
            )
            .unwrap();

        let inner = witness("(i)", flat_run(ms(&[("c", 1)]), &["u"]), "(o)");
        let mid_run = ChildRun::Hier(HierExecution {
            start: ms(&[("M1", 1)]),
            steps: vec![HierStep { transition: "tm".to_string(), witness: inner.clone() }],
        });
        let top_witness = witness("(i)", mid_run, "(o)");
        let record = ledger
            .submit(fire_msg(&top_addr, "T", serde_json::to_string(&top_witness).unwrap()));
        assert!(matches!(record.outcome, Outcome::Accepted { .. }), "{:?}", record.outcome);
        assert_eq!(
            ledger.contract(&top_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("A2", 1)]))
        );
        assert_eq!(
            ledger.contract(&mid_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("M2", 1)]))
        );
        assert_eq!(
            ledger.contract(&leaf_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("d", 1)]))
        );

        // A two-step mid run whose second step fails: the first step has
        // already advanced mid and leaf inside the attempt, and the
        // rollback must undo both.
        let (mut ledger, top_addr, mid_addr, leaf_addr) = {
            let mut l = Ledger::default();
            let la = l
                .register(&leaf, &BTreeMap::new(), &ContractState::Marking(ms(&[("c", 1)])))
                .unwrap();
            let ma = l
                .register(
                    &mid,
                    &BTreeMap::from([("tm".to_string(), la.clone())]),
                    &ContractState::Marking(ms(&[("M1", 1)])),
                )
                .unwrap();
            let ta = l
                .register(
                    &top,
                    &BTreeMap::from([("T".to_string(), ma.clone())]),
                    &ContractState::Marking(ms(&[("A1", 1)])),
                )
                .unwrap();
            (l, ta, ma, la)
        };
        let before = ledger.state_hash();
        let doomed_run = ChildRun::Hier(HierExecution {
            start: ms(&[("M1", 1)]),
            steps: vec![
                HierStep { transition: "tm".to_string(), witness: inner.clone() },
                HierStep { transition: "tm".to_string(), witness: inner },
            ],
        });
        let record = ledger.submit(fire_msg(
            &top_addr,
            "T",
            serde_json::to_string(&witness("(i)", doomed_run, "(o)")).unwrap(),
        ));
        assert!(matches!(record.outcome, Outcome::Rejected { .. }));
        assert_eq!(record.state_hash, before);
        assert_eq!(
            ledger.contract(&mid_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("M1", 1)]))
        );
        assert_eq!(
            ledger.contract(&leaf_addr).unwrap().state(),
            &ContractState::Marking(ms(&[("c", 1)]))
        );
    }

    #[test]
    fn registration_validates_children_and_state() {
        let mut ledger = Ledger::default();
        let parent = chain_parent(Arc::new(chain_child()));

        // No child address.
        let err = ledger
            .register(&parent, &BTreeMap::new(), &ContractState::Marking(ms(&[("P1", 1)])))
            .unwrap_err();
        assert!(err.0.contains("no child address"), "{err}");

        // Dangling child address.
        let err = ledger
            .register(
                &parent,
                &BTreeMap::from([("t1".to_string(), "ffffffffff".to_string())]),
                &ContractState::Marking(ms(&[("P1", 1)])),
            )
            .unwrap_err();
        assert!(err.0.contains("dangling child reference"), "{err}");

        // Child at the address runs a different definition.
        let other = NetDef::Flat(PetriNet::new(vec!["x"], vec![]).unwrap());
        let other_addr = ledger
            .register(&other, &BTreeMap::new(), &ContractState::Marking(Marking::new()))
            .unwrap();
        let err = ledger
            .register(
                &parent,
                &BTreeMap::from([("t1".to_string(), other_addr)]),
                &ContractState::Marking(ms(&[("P1", 1)])),
            )
            .unwrap_err();
        assert!(err.0.contains("does not match"), "{err}");

        // Initial marking over unknown places.
        let err = ledger
            .register(&chain_child(), &BTreeMap::new(), &ContractState::Marking(ms(&[("zz", 1)])))
            .unwrap_err();
        assert!(err.0.contains("zz"), "{err}");

        // Failed registrations are logged but register nothing.
        assert_eq!(ledger.contracts().len(), 1);
        assert!(ledger.log().iter().any(|r| matches!(r.outcome, Outcome::Rejected { .. })));
    }

    #[test]
    fn log_replay_reproduces_states_and_catches_corruption() {
        let (mut ledger, parent_addr, _) = chain_session(ChildStatePolicy::Persistent, 2);
        ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
        ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data())); // rejected
        ledger.submit(fire_msg("nobody", "t", String::new())); // rejected

        let replayed = Ledger::replay_log(ledger.log(), ChildStatePolicy::Persistent).unwrap();
        assert_eq!(replayed.state_hash(), ledger.state_hash());
        for (address, contract) in ledger.contracts() {
            assert_eq!(replayed.contract(address).unwrap().state(), contract.state());
        }

        let mut corrupted = ledger.log().to_vec();
        corrupted[1].seq = 7;
        assert_eq!(
            Ledger::replay_log(&corrupted, ChildStatePolicy::Persistent).unwrap_err(),
            LogError::SequenceGap { at: 1, expected: 2, found: 7 }
        );

        let mut corrupted = ledger.log().to_vec();
        corrupted[2].state_hash = "deadbeef".to_string();
        assert_eq!(
            Ledger::replay_log(&corrupted, ChildStatePolicy::Persistent).unwrap_err(),
            LogError::HashMismatch { at: 2 }
        );

        let mut corrupted = ledger.log().to_vec();
        corrupted[3].outcome =
            Outcome::Accepted { state: ContractState::Marking(Marking::new()) };
        assert!(matches!(
            Ledger::replay_log(&corrupted, ChildStatePolicy::Persistent).unwrap_err(),
            LogError::OutcomeMismatch { at: 3, .. }
        ));
    }

    #[test]
    fn log_records_round_trip_through_jsonl() {
        let (mut ledger, parent_addr, _) = chain_session(ChildStatePolicy::Persistent, 1);
        ledger.submit(fire_msg(&parent_addr, "t1", two_step_witness_data()));
        let text = records_to_jsonl(ledger.log());
        assert_eq!(text.lines().count(), 3);
        let parsed = records_from_jsonl(&text).unwrap();
        assert_eq!(parsed, ledger.log());
        let replayed = Ledger::replay_log(&parsed, ChildStatePolicy::Persistent).unwrap();
        assert_eq!(replayed.state_hash(), ledger.state_hash());
    }

    #[test]
    fn empty_child_runs_need_matching_boundary_markings() {
        // play(a) must equal stop(b) for an identity run to be accepted;
        // the chain binding maps (i) to {c:1} and (o) to {e:1}.
        let (mut ledger, parent_addr, _) = chain_session(ChildStatePolicy::Persistent, 1);
        let w = witness("(i)", flat_run(ms(&[("c", 1)]), &[]), "(o)");
        let record =
            ledger.submit(fire_msg(&parent_addr, "t1", serde_json::to_string(&w).unwrap()));
        let Outcome::Rejected { reason } = record.outcome else { panic!("expected rejection") };
        assert!(reason.contains("stop marking"), "unexpected reason: {reason}");
    }

    #[test]
    fn malformed_witness_data_is_rejected_not_fatal() {
        let (mut ledger, parent_addr, _) = chain_session(ChildStatePolicy::Persistent, 1);
        let before = ledger.state_hash();
        let record = ledger.submit(fire_msg(&parent_addr, "t1", "not json".to_string()));
        let Outcome::Rejected { reason } = record.outcome else { panic!("expected rejection") };
        assert!(reason.contains("not a witness"), "unexpected reason: {reason}");
        assert_eq!(record.state_hash, before);
    }
}
