//! Petri nets with state-set guards, hierarchical composition into child
//! nets, internalization to flat nets, and a transactional ledger engine.
//!
//! The crate is layered bottom-up:
//!
//! - [`multiset`] and [`net`]: markings, firing, replay, and bounded
//!   reachability over plain place/transition nets.
//! - [`span`]: finite spans with pullback composition and products.
//! - [`guarded`]: nets whose tokens carry states and whose transitions
//!   carry span guards.
//! - [`hier`]: nets whose transitions delegate to child nets through
//!   play/stop boundary tables, validated by recursive witnesses.
//! - [`internalize`]: flattening guarded and hierarchical nets into plain
//!   nets whose places are (place, state) pairs, with projection back.
//! - [`txn`]: an append-only ledger of net contracts with atomic,
//!   deterministic transaction processing.
//! - [`bundle`]: the JSON interchange format for nets and their wiring.
//! - [`pnml`]: PNML export/import for flat nets.

pub mod bundle;
pub mod guarded;
pub mod hier;
pub mod internalize;
pub mod multiset;
pub mod net;
pub mod pnml;
pub mod reach;
pub mod span;
pub mod txn;

pub use bundle::{load_bundle, load_bundle_str, net_from_value, BundleError, NetBundle};
pub use guarded::{GuardedFireError, GuardedMarking, GuardedNet};
pub use internalize::{InternalizedNet, ProjectError};
pub use hier::{
    ChildBinding, ChildRun, HierExecution, HierFireError, HierStep, HierarchicalNet, NetDef,
    Witness,
};
pub use multiset::Multiset;
pub use net::{Execution, Marking, PetriNet, Transition};
pub use pnml::{export_pnml, import_pnml, pnml_from_str, pnml_to_string, PnmlError};
pub use span::{FiniteSet, FiniteSpan, ProductSet};
pub use txn::{ChildStatePolicy, Contract, ContractState, Ledger, LogRecord, Message, Outcome};
