//! Hierarchical nets: transitions that delegate to child nets.
//!
//! A hierarchical net is a parent net whose places carry boundary-state
//! sets and whose every transition is bound to a child net together with
//! two tables: `play` sends each assignment of boundary states to the
//! consumed tokens to a start marking of the child, and `stop` sends each
//! assignment for the produced tokens to a target end marking. No
//! structural relationship between parent and child topologies is imposed;
//! the tables are the entire interface.
//!
//! Firing a transition requires a [`Witness`] `(a, x, b)`: a boundary
//! assignment for the consumed tokens, a run of the child, and a boundary
//! assignment for the produced tokens. The firing is accepted when the run
//! replays on the child, starts at `play(a)`, and ends at `stop(b)`;
//! children that are themselves hierarchical are validated by recursing on
//! the witness structure. [`HierarchicalNet::transition_span`] materializes
//! a transition's behaviour up to a child-run length bound as a span whose
//! apex is the set of accepted witnesses.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::guarded::{state_product, GuardedNet};
use crate::net::{Execution, Marking, PetriNet};
use crate::span::{FiniteSet, FiniteSpan, ProductSet};

/// Any of the three net flavours; the unit of reuse for children, bundles,
/// and contracts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetDef {
    Flat(PetriNet),
    Guarded(GuardedNet),
    Hierarchical(HierarchicalNet),
}

impl NetDef {
    pub fn kind(&self) -> &'static str {
        match self {
            NetDef::Flat(_) => "flat",
            NetDef::Guarded(_) => "guarded",
            NetDef::Hierarchical(_) => "hierarchical",
        }
    }

    /// The places markings of this net range over.
    pub fn places(&self) -> &[String] {
        match self {
            NetDef::Flat(n) => n.places(),
            NetDef::Guarded(g) => g.base().places(),
            NetDef::Hierarchical(h) => h.parent().places(),
        }
    }
}

impl Serialize for NetDef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            NetDef::Flat(n) => n.serialize(serializer),
            NetDef::Guarded(g) => g.serialize(serializer),
            NetDef::Hierarchical(h) => h.serialize(serializer),
        }
    }
}

/// Which boundary table a problem refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundarySide {
    Play,
    Stop,
}

impl fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundarySide::Play => "play",
            BoundarySide::Stop => "stop",
        })
    }
}

/// Structural problems in a hierarchical net or a span request.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierError {
    #[error("place `{0}` has no boundary state set")]
    MissingPlaceSet(String),
    #[error("boundary state set given for unknown place `{0}`")]
    UnexpectedPlaceSet(String),
    #[error("transition `{0}` has no child binding")]
    MissingBinding(String),
    #[error("child binding given for unknown transition `{0}`")]
    UnexpectedBinding(String),
    #[error("transition `{0}` binds a guarded child; children must be flat or hierarchical")]
    GuardedChild(String),
    #[error("{side} table of `{transition}` does not match the boundary assignments of that side")]
    BoundaryDomainMismatch { transition: String, side: BoundarySide },
    #[error("{side} marking for `{element}` of `{transition}` is not a marking of the child: {cause}")]
    InvalidBoundaryMarking {
        transition: String,
        side: BoundarySide,
        element: String,
        cause: String,
    },
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` binds a hierarchical child; flatten the child first")]
    ChildNotFlat(String),
    #[error("generated ids collide: {0}")]
    IdCollision(String),
}

/// Why a witnessed hierarchical firing was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierFireError {
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("`{element}` is not a boundary assignment in the {side} table")]
    InvalidBoundaryState { side: BoundarySide, element: String },
    #[error("child run does not match the {side} marking")]
    BoundaryMismatch { side: BoundarySide },
    #[error("child run fails at step {step}: {cause}")]
    ChildRunInvalid { step: usize, cause: String },
    #[error("child run kind does not match the child of `{0}`")]
    WrongChildRunKind(String),
}

/// Why a multi-step hierarchical replay was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("step {step}: {cause}")]
pub struct HierReplayError {
    pub step: usize,
    pub cause: HierFireError,
}

/// The child net bound to one parent transition, with its boundary tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChildBinding {
    pub child: Arc<NetDef>,
    pub play: BTreeMap<String, Marking>,
    pub stop: BTreeMap<String, Marking>,
}

/// A run of a child net: flat executions for flat children, witnessed
/// executions for hierarchical children. A zero-step run is accepted for
/// either kind, since both forms of it mean the same identity run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChildRun {
    Flat(Execution),
    Hier(HierExecution),
}

impl ChildRun {
    pub fn start(&self) -> &Marking {
        match self {
            ChildRun::Flat(e) => &e.start,
            ChildRun::Hier(h) => &h.start,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ChildRun::Flat(e) => e.steps.len(),
            ChildRun::Hier(h) => h.steps.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to fire one hierarchical transition: boundary
/// assignments for the consumed and produced tokens, and a child run
/// connecting their play and stop markings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub a: String,
    pub x: ChildRun,
    pub b: String,
}

/// One step of a hierarchical execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierStep {
    pub transition: String,
    pub witness: Witness,
}

/// A witnessed firing sequence of a hierarchical net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierExecution {
    pub start: Marking,
    pub steps: Vec<HierStep>,
}

/// A parent net whose transitions delegate to child nets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchicalNet {
    parent: PetriNet,
    place_sets: BTreeMap<String, FiniteSet>,
    bindings: BTreeMap<String, ChildBinding>,
    pre_products: BTreeMap<String, ProductSet>,
    post_products: BTreeMap<String, ProductSet>,
}

impl HierarchicalNet {
    /// Builds a hierarchical net, checking that every place has a boundary
    /// state set, every transition has a binding to a flat or hierarchical
    /// child, and each binding's play/stop tables cover exactly the
    /// boundary assignments of the transition's pre-/postcondition with
    /// markings that fit the child.
    pub fn new(
        parent: PetriNet,
        place_sets: BTreeMap<String, FiniteSet>,
        bindings: BTreeMap<String, ChildBinding>,
    ) -> Result<Self, HierError> {
        for place in parent.places() {
            if !place_sets.contains_key(place) {
                return Err(HierError::MissingPlaceSet(place.clone()));
            }
        }
        for place in place_sets.keys() {
            if !parent.has_place(place) {
                return Err(HierError::UnexpectedPlaceSet(place.clone()));
            }
        }
        for id in bindings.keys() {
            if parent.transition(id).is_none() {
                return Err(HierError::UnexpectedBinding(id.clone()));
            }
        }
        let mut pre_products = BTreeMap::new();
        let mut post_products = BTreeMap::new();
        for t in parent.transitions() {
            let binding = bindings
                .get(&t.id)
                .ok_or_else(|| HierError::MissingBinding(t.id.clone()))?;
            if matches!(*binding.child, NetDef::Guarded(_)) {
                return Err(HierError::GuardedChild(t.id.clone()));
            }
            let pre = state_product(parent.places(), &place_sets, &t.pre)
                .map_err(|_| HierError::MissingPlaceSet(t.id.clone()))?;
            let post = state_product(parent.places(), &place_sets, &t.post)
                .map_err(|_| HierError::MissingPlaceSet(t.id.clone()))?;
            for (side, table, product) in [
                (BoundarySide::Play, &binding.play, &pre),
                (BoundarySide::Stop, &binding.stop, &post),
            ] {
                if table.len() != product.len()
                    || !product.set().iter().all(|e| table.contains_key(e))
                {
                    return Err(HierError::BoundaryDomainMismatch {
                        transition: t.id.clone(),
                        side,
                    });
                }
                let child_places = binding.child.places();
                for (element, marking) in table {
                    for place in marking.support() {
                        if !child_places.iter().any(|p| p == place) {
                            return Err(HierError::InvalidBoundaryMarking {
                                transition: t.id.clone(),
                                side,
                                element: element.clone(),
                                cause: format!("unknown place `{place}`"),
                            });
                        }
                    }
                }
            }
            pre_products.insert(t.id.clone(), pre);
            post_products.insert(t.id.clone(), post);
        }
        Ok(HierarchicalNet { parent, place_sets, bindings, pre_products, post_products })
    }

    pub fn parent(&self) -> &PetriNet {
        &self.parent
    }

    pub fn place_sets(&self) -> &BTreeMap<String, FiniteSet> {
        &self.place_sets
    }

    pub fn bindings(&self) -> &BTreeMap<String, ChildBinding> {
        &self.bindings
    }

    pub fn binding(&self, transition: &str) -> Option<&ChildBinding> {
        self.bindings.get(transition)
    }

    /// The boundary-assignment product of `transition`'s precondition (the
    /// domain of its play table).
    pub fn pre_product(&self, transition: &str) -> Option<&ProductSet> {
        self.pre_products.get(transition)
    }

    /// The boundary-assignment product of `transition`'s postcondition (the
    /// domain of its stop table).
    pub fn post_product(&self, transition: &str) -> Option<&ProductSet> {
        self.post_products.get(transition)
    }

    /// The canonical boundary-state product of a marking over the parent's
    /// places.
    pub fn eval_product(&self, m: &Marking) -> Result<ProductSet, crate::guarded::GuardedError> {
        state_product(self.parent.places(), &self.place_sets, m)
    }

    /// Fires `transition` at `m` with `witness`. Succeeds exactly when the
    /// transition is enabled, the witness's boundary assignments are in the
    /// play/stop tables, and its child run replays on the child from the
    /// play marking to the stop marking (recursively for hierarchical
    /// children). On any error the marking is unchanged.
    pub fn fire(
        &self,
        m: &Marking,
        transition: &str,
        witness: &Witness,
    ) -> Result<Marking, HierFireError> {
        let t = self
            .parent
            .transition(transition)
            .ok_or_else(|| HierFireError::UnknownTransition(transition.to_string()))?;
        if !m.covers(&t.pre) {
            return Err(HierFireError::NotEnabled(transition.to_string()));
        }
        let binding = &self.bindings[transition];
        let play_marking = binding.play.get(&witness.a).ok_or_else(|| {
            HierFireError::InvalidBoundaryState {
                side: BoundarySide::Play,
                element: witness.a.clone(),
            }
        })?;
        let stop_marking = binding.stop.get(&witness.b).ok_or_else(|| {
            HierFireError::InvalidBoundaryState {
                side: BoundarySide::Stop,
                element: witness.b.clone(),
            }
        })?;
        if witness.x.start() != play_marking {
            return Err(HierFireError::BoundaryMismatch { side: BoundarySide::Play });
        }
        let end = replay_child_run(&binding.child, &witness.x, transition)?;
        if end != *stop_marking {
            return Err(HierFireError::BoundaryMismatch { side: BoundarySide::Stop });
        }
        Ok(self.parent.fire(m, transition).expect("enabledness was checked"))
    }

    /// Replays a witnessed firing sequence, returning the final marking.
    pub fn replay(&self, execution: &HierExecution) -> Result<Marking, HierReplayError> {
        let mut m = execution.start.clone();
        for (step, s) in execution.steps.iter().enumerate() {
            m = self
                .fire(&m, &s.transition, &s.witness)
                .map_err(|cause| HierReplayError { step, cause })?;
        }
        Ok(m)
    }

    /// Materializes `transition`'s behaviour up to child runs of length
    /// `max_child_steps` as a span between its boundary-assignment
    /// products. The apex holds one element per accepted witness `(a, x,
    /// b)`; elements are ordered by boundary assignment `a`, then child
    /// runs shortest first (extensions in declaration order), then `b`.
    /// Requires a flat child.
    pub fn transition_span(
        &self,
        transition: &str,
        max_child_steps: usize,
    ) -> Result<FiniteSpan, HierError> {
        if self.parent.transition(transition).is_none() {
            return Err(HierError::UnknownTransition(transition.to_string()));
        }
        let binding = &self.bindings[transition];
        let NetDef::Flat(child) = &*binding.child else {
            return Err(HierError::ChildNotFlat(transition.to_string()));
        };
        let left = &self.pre_products[transition];
        let right = &self.post_products[transition];
        let mut apex = Vec::new();
        let mut left_leg = BTreeMap::new();
        let mut right_leg = BTreeMap::new();
        for a in left.set().iter() {
            let start = &binding.play[a];
            for (steps, end) in enumerate_runs(child, start, max_child_steps) {
                for b in right.set().iter() {
                    if binding.stop[b] != end {
                        continue;
                    }
                    let id = witness_id(a, &steps, b);
                    left_leg.insert(id.clone(), a.to_string());
                    right_leg.insert(id.clone(), b.to_string());
                    apex.push(id);
                }
            }
        }
        Ok(FiniteSpan::new(
            left.set().clone(),
            right.set().clone(),
            FiniteSet::new(apex).expect("witness ids are distinct"),
            left_leg,
            right_leg,
        )
        .expect("constructed legs are total and land in the feet"))
    }

}

/// The apex id [`HierarchicalNet::transition_span`] would assign to a
/// witness: useful for checking a witness against a materialized span.
pub fn witness_apex_id(witness: &Witness) -> String {
    let steps: Vec<String> = match &witness.x {
        ChildRun::Flat(e) => e.steps.clone(),
        ChildRun::Hier(h) => h.steps.iter().map(|s| s.transition.clone()).collect(),
    };
    witness_id(&witness.a, &steps, &witness.b)
}

/// The generated apex id of a witness: boundary assignment, child steps
/// joined by `.`, boundary assignment.
fn witness_id(a: &str, steps: &[String], b: &str) -> String {
    format!("{a};{};{b}", steps.join("."))
}

/// All firing sequences of length at most `bound` from `start`, shortest
/// first, extensions in transition declaration order. Distinct sequences
/// count separately even when they reach the same marking.
fn enumerate_runs(net: &PetriNet, start: &Marking, bound: usize) -> Vec<(Vec<String>, Marking)> {
    let mut all = vec![(Vec::new(), start.clone())];
    let mut frontier = all.clone();
    for _ in 0..bound {
        let mut next = Vec::new();
        for (steps, m) in &frontier {
            for t in net.transitions() {
                if let Ok(m2) = net.fire(m, &t.id) {
                    let mut s2 = steps.clone();
                    s2.push(t.id.clone());
                    next.push((s2, m2));
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Replays a child run against a child definition, returning its end
/// marking. A zero-step run of either kind is the identity run.
fn replay_child_run(
    child: &NetDef,
    run: &ChildRun,
    transition: &str,
) -> Result<Marking, HierFireError> {
    match (child, run) {
        (NetDef::Flat(net), ChildRun::Flat(e)) => {
            net.replay(e).map_err(|e| HierFireError::ChildRunInvalid {
                step: e.step,
                cause: e.cause.to_string(),
            })
        }
        (NetDef::Hierarchical(h), ChildRun::Hier(he)) => {
            h.replay(he).map_err(|e| HierFireError::ChildRunInvalid {
                step: e.step,
                cause: e.cause.to_string(),
            })
        }
        (_, run) if run.is_empty() => Ok(run.start().clone()),
        _ => Err(HierFireError::WrongChildRunKind(transition.to_string())),
    }
}

impl Serialize for HierarchicalNet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct BindingWire<'a> {
            child: &'a NetDef,
            play: &'a BTreeMap<String, Marking>,
            stop: &'a BTreeMap<String, Marking>,
        }
        let mut st = serializer.serialize_struct("HierarchicalNet", 4)?;
        st.serialize_field("places", self.parent.places())?;
        st.serialize_field("transitions", self.parent.transitions())?;
        let sets: BTreeMap<&String, &[String]> = self
            .place_sets
            .iter()
            .map(|(place, set)| (place, set.elements()))
            .collect();
        st.serialize_field("place_sets", &sets)?;
        let bindings: BTreeMap<&String, BindingWire> = self
            .bindings
            .iter()
            .map(|(t, b)| {
                (t, BindingWire { child: &b.child, play: &b.play, stop: &b.stop })
            })
            .collect();
        st.serialize_field("bindings", &bindings)?;
        st.end()
    }
}
