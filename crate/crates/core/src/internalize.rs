//! Flattening guarded and hierarchical nets into plain nets.
//!
//! The flattened net has one place `A@a` per (place, state) pair and one
//! transition `f@s` per (transition, witness) pair; a transition's pre- and
//! postcondition spell out the witness's consumed and produced token
//! states. Origin tables remember where every generated id came from, so
//! executions of the flattened net project back onto the original and
//! guarded markings encode and decode losslessly (up to the order of equal
//! tokens within a place, which a marking does not track).
//!
//! Hierarchical nets flatten through [`HierarchicalNet::transition_span`]:
//! each transition contributes one flattened transition per witness whose
//! child run is no longer than the chosen bound, so raising the bound only
//! adds transitions.

use std::collections::BTreeMap;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::guarded::{marking_slots, GuardedFireError, GuardedMarking, GuardedNet};
use crate::hier::{HierError, HierarchicalNet};
use crate::multiset::Multiset;
use crate::net::{Execution, Marking, NetError, PetriNet, Transition};
use crate::span::{FiniteSet, FiniteSpan, ProductSet};

/// Why an internalized-net value could not be mapped back.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProjectError {
    #[error("place `{0}` is not an internalized place")]
    UnknownPlace(String),
    #[error("transition `{0}` is not an internalized transition")]
    UnknownTransition(String),
    #[error("execution does not replay on the internalized net at step {step}: {cause}")]
    InvalidExecution { step: usize, cause: String },
}

/// A flat net produced by internalization, with origin tables mapping the
/// generated ids back to (place, state) and (transition, witness) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InternalizedNet {
    net: PetriNet,
    place_origin: BTreeMap<String, (String, String)>,
    transition_origin: BTreeMap<String, (String, String)>,
}

fn place_id(place: &str, state: &str) -> String {
    format!("{place}@{state}")
}

fn transition_id(transition: &str, witness: &str) -> String {
    format!("{transition}@{witness}")
}

/// Shared flattening core: one place per (place, state), one transition per
/// (transition, witness), with pre/post decoded from the span legs.
fn internalize_spans(
    base: &PetriNet,
    place_sets: &BTreeMap<String, FiniteSet>,
    spans: &BTreeMap<String, FiniteSpan>,
    pre_products: &BTreeMap<String, ProductSet>,
    post_products: &BTreeMap<String, ProductSet>,
) -> Result<InternalizedNet, NetError> {
    let mut places = Vec::new();
    let mut place_origin = BTreeMap::new();
    for place in base.places() {
        for state in place_sets[place].iter() {
            let id = place_id(place, state);
            place_origin.insert(id.clone(), (place.clone(), state.to_string()));
            places.push(id);
        }
    }

    let decode_side = |product: &ProductSet, side: &Multiset, leg: &str| -> Multiset {
        let components = product
            .components(leg)
            .expect("span legs land in their side's state product");
        let mut out = Multiset::new();
        for (place, state) in marking_slots(base.places(), side).iter().zip(components) {
            out.add(place_id(place, state), 1);
        }
        out
    };

    let mut transitions = Vec::new();
    let mut transition_origin = BTreeMap::new();
    for t in base.transitions() {
        let span = &spans[&t.id];
        for witness in span.apex().iter() {
            let id = transition_id(&t.id, witness);
            let pre = decode_side(
                &pre_products[&t.id],
                &t.pre,
                span.left(witness).expect("legs are total"),
            );
            let post = decode_side(
                &post_products[&t.id],
                &t.post,
                span.right(witness).expect("legs are total"),
            );
            transition_origin.insert(id.clone(), (t.id.clone(), witness.to_string()));
            transitions.push(Transition::new(id, pre, post));
        }
    }

    // Generated ids are distinct as long as source ids avoid `@`; collisions
    // otherwise surface here as duplicate-id errors.
    let net = PetriNet::new(places, transitions)?;
    Ok(InternalizedNet { net, place_origin, transition_origin })
}

impl GuardedNet {
    /// Flattens this net: tokens-with-states become plain tokens on
    /// (place, state) pairs and witnesses become plain transitions.
    pub fn internalize(&self) -> Result<InternalizedNet, NetError> {
        let spans: BTreeMap<String, FiniteSpan> = self
            .base()
            .transitions()
            .iter()
            .map(|t| (t.id.clone(), self.span(&t.id).expect("spans are total").clone()))
            .collect();
        let pre_products = self
            .base()
            .transitions()
            .iter()
            .map(|t| (t.id.clone(), self.pre_product(&t.id).expect("products are total").clone()))
            .collect();
        let post_products = self
            .base()
            .transitions()
            .iter()
            .map(|t| (t.id.clone(), self.post_product(&t.id).expect("products are total").clone()))
            .collect();
        internalize_spans(self.base(), self.place_sets(), &spans, &pre_products, &post_products)
    }

    /// Bounded reachability between guarded markings, answered on the
    /// flattened net: both markings are encoded, searched with the plain
    /// breadth-first search, and the witness execution (over the flattened
    /// net) is returned. `None` means not reachable within the bound.
    pub fn lift_reachability(
        &self,
        from: &GuardedMarking,
        to: &GuardedMarking,
        max_steps: usize,
    ) -> Result<Option<Execution>, GuardedFireError> {
        let internal = self
            .internalize()
            .map_err(|e| GuardedFireError::InvalidMarking(e.to_string()))?;
        let from = internal.encode_marking(self, from)?;
        let to = internal.encode_marking(self, to)?;
        Ok(internal.net().reachable_bounded(&from, &to, max_steps))
    }
}

impl HierarchicalNet {
    /// Flattens this net up to child runs of length `max_child_steps`: each
    /// transition contributes one flattened transition per accepted witness
    /// within the bound. Requires flat children.
    pub fn internalize(&self, max_child_steps: usize) -> Result<InternalizedNet, HierError> {
        let mut spans = BTreeMap::new();
        let mut pre_products = BTreeMap::new();
        let mut post_products = BTreeMap::new();
        for t in self.parent().transitions() {
            spans.insert(t.id.clone(), self.transition_span(&t.id, max_child_steps)?);
            pre_products
                .insert(t.id.clone(), self.pre_product(&t.id).expect("products are total").clone());
            post_products.insert(
                t.id.clone(),
                self.post_product(&t.id).expect("products are total").clone(),
            );
        }
        internalize_spans(self.parent(), self.place_sets(), &spans, &pre_products, &post_products)
            .map_err(|e| HierError::IdCollision(e.to_string()))
    }
}

impl InternalizedNet {
    /// The flattened net itself.
    pub fn net(&self) -> &PetriNet {
        &self.net
    }

    /// Maps each flattened place id to its (place, state) origin.
    pub fn place_origin(&self) -> &BTreeMap<String, (String, String)> {
        &self.place_origin
    }

    /// Maps each flattened transition id to its (transition, witness)
    /// origin.
    pub fn transition_origin(&self) -> &BTreeMap<String, (String, String)> {
        &self.transition_origin
    }

    /// Projects an execution of the flattened net onto the original net:
    /// the start marking forgets token states and each step keeps only its
    /// originating transition. The execution must replay on the flattened
    /// net.
    pub fn project(&self, execution: &Execution) -> Result<Execution, ProjectError> {
        for place in execution.start.support() {
            if !self.place_origin.contains_key(place) {
                return Err(ProjectError::UnknownPlace(place.to_string()));
            }
        }
        self.net
            .replay(execution)
            .map_err(|e| ProjectError::InvalidExecution { step: e.step, cause: e.cause.to_string() })?;
        let mut start = Marking::new();
        for (place, n) in execution.start.iter() {
            start.add(self.place_origin[place].0.clone(), n);
        }
        let mut steps = Vec::with_capacity(execution.steps.len());
        for step in &execution.steps {
            let (transition, _) = self
                .transition_origin
                .get(step)
                .ok_or_else(|| ProjectError::UnknownTransition(step.clone()))?;
            steps.push(transition.clone());
        }
        Ok(Execution::new(start, steps))
    }

    /// Encodes a guarded marking of `source` as a marking of the flattened
    /// net: one token on `A@a` per token of `A` in state `a`. Within-place
    /// token order is forgotten.
    pub fn encode_marking(
        &self,
        source: &GuardedNet,
        gm: &GuardedMarking,
    ) -> Result<Marking, GuardedFireError> {
        source.validate_marking(gm)?;
        self.encode_tokens(source.tokens(gm))
    }

    /// Encodes a stateful boundary configuration of `source` — a guarded
    /// marking over the parent's places, each token carrying a boundary
    /// state — as a marking of the flattened net. This is the start/end
    /// format for reachability questions on a flattened hierarchical net,
    /// whose places track boundary states that the parent's own plain
    /// markings forget.
    pub fn encode_boundary_marking(
        &self,
        source: &HierarchicalNet,
        gm: &GuardedMarking,
    ) -> Result<Marking, GuardedFireError> {
        for place in gm.shape.support() {
            if !source.parent().has_place(place) {
                return Err(GuardedFireError::InvalidMarking(format!("unknown place `{place}`")));
            }
        }
        let slots = marking_slots(source.parent().places(), &gm.shape);
        if slots.len() != gm.state.len() {
            return Err(GuardedFireError::InvalidMarking(format!(
                "{} tokens but {} states",
                slots.len(),
                gm.state.len()
            )));
        }
        for (i, (place, state)) in slots.iter().zip(&gm.state).enumerate() {
            let in_set =
                source.place_sets().get(*place).is_some_and(|set| set.contains(state));
            if !in_set {
                return Err(GuardedFireError::InvalidMarking(format!(
                    "state `{state}` at token {i} is not in the state set of place `{place}`"
                )));
            }
        }
        self.encode_tokens(slots.iter().copied().zip(gm.state.iter().map(String::as_str)))
    }

    fn encode_tokens<'a>(
        &self,
        tokens: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Marking, GuardedFireError> {
        let mut out = Marking::new();
        for (place, state) in tokens {
            let id = place_id(place, state);
            if !self.place_origin.contains_key(&id) {
                return Err(GuardedFireError::InvalidMarking(format!(
                    "token ({place}, {state}) has no internalized place"
                )));
            }
            out.add(id, 1);
        }
        Ok(out)
    }

    /// Decodes a marking of the flattened net back into a guarded marking
    /// of `source`, with each place's tokens ordered by its state set.
    pub fn decode_marking(
        &self,
        source: &GuardedNet,
        m: &Marking,
    ) -> Result<GuardedMarking, ProjectError> {
        self.decode_tokens(source.base().places(), source.place_sets(), m)
    }

    /// Decodes a marking of the flattened net back into a stateful boundary
    /// configuration of `source` (the inverse of
    /// [`encode_boundary_marking`](Self::encode_boundary_marking) up to
    /// within-place token order).
    pub fn decode_boundary_marking(
        &self,
        source: &HierarchicalNet,
        m: &Marking,
    ) -> Result<GuardedMarking, ProjectError> {
        self.decode_tokens(source.parent().places(), source.place_sets(), m)
    }

    fn decode_tokens(
        &self,
        place_order: &[String],
        sets: &BTreeMap<String, FiniteSet>,
        m: &Marking,
    ) -> Result<GuardedMarking, ProjectError> {
        let mut by_place: BTreeMap<&str, Vec<(usize, &str, u64)>> = BTreeMap::new();
        for (internal, n) in m.iter() {
            let (place, state) = self
                .place_origin
                .get(internal)
                .ok_or_else(|| ProjectError::UnknownPlace(internal.to_string()))?;
            let set = sets
                .get(place)
                .ok_or_else(|| ProjectError::UnknownPlace(internal.to_string()))?;
            let rank = set
                .iter()
                .position(|e| e == state)
                .ok_or_else(|| ProjectError::UnknownPlace(internal.to_string()))?;
            by_place.entry(place.as_str()).or_default().push((rank, state, n));
        }
        let mut shape = Marking::new();
        let mut state = Vec::new();
        for place in place_order {
            let Some(mut tokens) = by_place.remove(place.as_str()) else { continue };
            tokens.sort();
            for (_, s, n) in tokens {
                shape.add(place.clone(), n);
                for _ in 0..n {
                    state.push(s.to_string());
                }
            }
        }
        Ok(GuardedMarking { shape, state })
    }

    /// Decodes the steps of a flattened-net execution into (transition,
    /// witness) pairs.
    pub fn decode_steps(&self, steps: &[String]) -> Result<Vec<(String, String)>, ProjectError> {
        steps
            .iter()
            .map(|s| {
                self.transition_origin
                    .get(s)
                    .cloned()
                    .ok_or_else(|| ProjectError::UnknownTransition(s.clone()))
            })
            .collect()
    }
}

impl Serialize for InternalizedNet {
    /// Serializes as the flat net's wire format plus an `origin` object
    /// with the two id tables.
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Origin<'a> {
            places: &'a BTreeMap<String, (String, String)>,
            transitions: &'a BTreeMap<String, (String, String)>,
        }
        let mut st = serializer.serialize_struct("InternalizedNet", 3)?;
        st.serialize_field("places", self.net.places())?;
        st.serialize_field("transitions", self.net.transitions())?;
        st.serialize_field(
            "origin",
            &Origin { places: &self.place_origin, transitions: &self.transition_origin },
        )?;
        st.end()
    }
}
