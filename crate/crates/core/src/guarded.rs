//! Nets whose places carry finite state sets and whose transitions carry
//! span guards.
//!
//! Each place `A` gets a finite set of token states; a marking then induces
//! a canonical product: one slot per token (places in declaration order,
//! copies of a place adjacent), each slot ranging over that place's states.
//! Each transition carries a span whose feet are exactly the products of its
//! pre- and postcondition, so an apex element is a witness pairing consumed
//! token states with produced token states.
//!
//! A guarded marking enriches a marking with one state per token. Firing
//! consumes tokens whose states match the witness's left leg (taking the
//! oldest matching token of a place first, so the choice is deterministic
//! and never restricts which markings are reachable), and appends produced
//! tokens in the states given by the witness's right leg.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiset::Multiset;
use crate::net::{Execution, Marking, PetriNet};
use crate::span::{FiniteSet, FiniteSpan, ProductSet};

/// Which side of a transition a problem refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Pre,
    Post,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Pre => "precondition",
            Side::Post => "postcondition",
        })
    }
}

/// Structural problems in a guarded net or a state-product request.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuardedError {
    #[error("place `{0}` has no state set")]
    MissingPlaceSet(String),
    #[error("state set given for unknown place `{0}`")]
    UnexpectedPlaceSet(String),
    #[error("transition `{0}` has no span")]
    MissingSpan(String),
    #[error("span given for unknown transition `{0}`")]
    UnexpectedSpan(String),
    #[error("span foot for the {side} of `{transition}` differs from the state product of that side")]
    FootMismatch { transition: String, side: Side },
    #[error("marking uses unknown place `{0}`")]
    UnknownPlace(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("step {step}: transition `{transition}` is not enabled")]
    NotEnabledAt { step: usize, transition: String },
}

/// Why a witnessed firing was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuardedFireError {
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("witness `{witness}` does not apply to transition `{transition}` at this marking")]
    WitnessMismatch { transition: String, witness: String },
    #[error("invalid guarded marking: {0}")]
    InvalidMarking(String),
}

/// A marking together with one state per token. The state tuple follows the
/// canonical token order: places in declaration order, copies of a place
/// adjacent, and within a place tokens ordered oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GuardedMarking {
    pub shape: Marking,
    pub state: Vec<String>,
}

impl GuardedMarking {
    pub fn new(shape: Marking, state: Vec<impl Into<String>>) -> Self {
        GuardedMarking { shape, state: state.into_iter().map(Into::into).collect() }
    }
}

impl fmt::Display for GuardedMarking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @ [", self.shape)?;
        for (i, s) in self.state.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            f.write_str(s)?;
        }
        write!(f, "]")
    }
}

/// A net with per-place state sets and per-transition span guards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardedNet {
    base: PetriNet,
    place_sets: BTreeMap<String, FiniteSet>,
    spans: BTreeMap<String, FiniteSpan>,
    pre_products: BTreeMap<String, ProductSet>,
    post_products: BTreeMap<String, ProductSet>,
}

/// Expands a marking into its token slots: places in declaration order,
/// copies adjacent.
pub(crate) fn marking_slots<'a>(place_order: &'a [String], m: &Multiset) -> Vec<&'a str> {
    let mut slots = Vec::new();
    for place in place_order {
        for _ in 0..m.count(place) {
            slots.push(place.as_str());
        }
    }
    slots
}

/// Builds the canonical state product of a marking from a place order and
/// per-place state sets.
pub(crate) fn state_product(
    place_order: &[String],
    sets: &BTreeMap<String, FiniteSet>,
    m: &Multiset,
) -> Result<ProductSet, GuardedError> {
    for place in m.support() {
        if !place_order.iter().any(|p| p == place) {
            return Err(GuardedError::UnknownPlace(place.to_string()));
        }
        if !sets.contains_key(place) {
            return Err(GuardedError::MissingPlaceSet(place.to_string()));
        }
    }
    let factors = marking_slots(place_order, m)
        .into_iter()
        .map(|place| (place.to_string(), &sets[place]))
        .collect();
    Ok(ProductSet::build(factors))
}

impl GuardedNet {
    /// Builds a guarded net, checking that every place has a state set,
    /// every transition has a span, and each span's feet are exactly the
    /// state products of that transition's pre- and postcondition.
    pub fn new(
        base: PetriNet,
        place_sets: BTreeMap<String, FiniteSet>,
        spans: BTreeMap<String, FiniteSpan>,
    ) -> Result<Self, GuardedError> {
        for place in base.places() {
            if !place_sets.contains_key(place) {
                return Err(GuardedError::MissingPlaceSet(place.clone()));
            }
        }
        for place in place_sets.keys() {
            if !base.has_place(place) {
                return Err(GuardedError::UnexpectedPlaceSet(place.clone()));
            }
        }
        for id in spans.keys() {
            if base.transition(id).is_none() {
                return Err(GuardedError::UnexpectedSpan(id.clone()));
            }
        }
        let mut pre_products = BTreeMap::new();
        let mut post_products = BTreeMap::new();
        for t in base.transitions() {
            let span = spans
                .get(&t.id)
                .ok_or_else(|| GuardedError::MissingSpan(t.id.clone()))?;
            let pre = state_product(base.places(), &place_sets, &t.pre)?;
            let post = state_product(base.places(), &place_sets, &t.post)?;
            if span.left_foot() != pre.set() {
                return Err(GuardedError::FootMismatch { transition: t.id.clone(), side: Side::Pre });
            }
            if span.right_foot() != post.set() {
                return Err(GuardedError::FootMismatch { transition: t.id.clone(), side: Side::Post });
            }
            pre_products.insert(t.id.clone(), pre);
            post_products.insert(t.id.clone(), post);
        }
        Ok(GuardedNet { base, place_sets, spans, pre_products, post_products })
    }

    pub fn base(&self) -> &PetriNet {
        &self.base
    }

    pub fn place_sets(&self) -> &BTreeMap<String, FiniteSet> {
        &self.place_sets
    }

    pub fn place_set(&self, place: &str) -> Option<&FiniteSet> {
        self.place_sets.get(place)
    }

    pub fn span(&self, transition: &str) -> Option<&FiniteSpan> {
        self.spans.get(transition)
    }

    /// The state product of `transition`'s precondition (the left foot of
    /// its span, with decode tables).
    pub fn pre_product(&self, transition: &str) -> Option<&ProductSet> {
        self.pre_products.get(transition)
    }

    /// The state product of `transition`'s postcondition.
    pub fn post_product(&self, transition: &str) -> Option<&ProductSet> {
        self.post_products.get(transition)
    }

    /// The canonical state product of a marking, with decode tables.
    pub fn eval_product(&self, m: &Multiset) -> Result<ProductSet, GuardedError> {
        state_product(self.base.places(), &self.place_sets, m)
    }

    /// The canonical state product of a marking as a plain finite set: one
    /// element per assignment of a state to each token. The empty marking
    /// evaluates to the unit set containing only the empty tuple.
    pub fn eval_object(&self, m: &Multiset) -> Result<FiniteSet, GuardedError> {
        Ok(self.eval_product(m)?.set().clone())
    }

    /// Checks that a guarded marking fits this net: known places, one state
    /// per token, each state drawn from its slot's place set.
    pub fn validate_marking(&self, gm: &GuardedMarking) -> Result<(), GuardedFireError> {
        for place in gm.shape.support() {
            if !self.base.has_place(place) {
                return Err(GuardedFireError::InvalidMarking(format!("unknown place `{place}`")));
            }
        }
        let slots = marking_slots(self.base.places(), &gm.shape);
        if slots.len() != gm.state.len() {
            return Err(GuardedFireError::InvalidMarking(format!(
                "{} tokens but {} states",
                slots.len(),
                gm.state.len()
            )));
        }
        for (i, (place, state)) in slots.iter().zip(&gm.state).enumerate() {
            if !self.place_sets[*place].contains(state) {
                return Err(GuardedFireError::InvalidMarking(format!(
                    "state `{state}` at token {i} is not in the state set of place `{place}`"
                )));
            }
        }
        Ok(())
    }

    /// The tokens of a guarded marking as `(place, state)` pairs in
    /// canonical order.
    pub fn tokens<'a>(&'a self, gm: &'a GuardedMarking) -> Vec<(&'a str, &'a str)> {
        marking_slots(self.base.places(), &gm.shape)
            .into_iter()
            .zip(gm.state.iter().map(String::as_str))
            .collect()
    }

    /// Fires `transition` at `gm` using `witness`, an apex element of the
    /// transition's span. The witness's left leg must match the states of
    /// tokens available in the precondition's places; matched tokens are
    /// consumed (oldest matching first) and produced tokens are appended in
    /// the states given by the right leg.
    pub fn fire(
        &self,
        gm: &GuardedMarking,
        transition: &str,
        witness: &str,
    ) -> Result<GuardedMarking, GuardedFireError> {
        self.validate_marking(gm)?;
        let t = self
            .base
            .transition(transition)
            .ok_or_else(|| GuardedFireError::UnknownTransition(transition.to_string()))?;
        let rest_shape = gm
            .shape
            .diff(&t.pre)
            .ok_or_else(|| GuardedFireError::NotEnabled(transition.to_string()))?;
        let span = &self.spans[transition];
        let mismatch = || GuardedFireError::WitnessMismatch {
            transition: transition.to_string(),
            witness: witness.to_string(),
        };
        if !span.apex().contains(witness) {
            return Err(mismatch());
        }

        // Decode the witness's legs into per-slot state tuples.
        let pre_product = &self.pre_products[transition];
        let post_product = &self.post_products[transition];
        let needed = pre_product
            .components(span.left(witness).expect("legs are total"))
            .expect("left legs land in the precondition product");
        let produced = post_product
            .components(span.right(witness).expect("legs are total"))
            .expect("right legs land in the postcondition product");

        // Group the marking's tokens by place and pick, for each leg
        // component in order, the oldest still-unconsumed token with that
        // state.
        let mut groups: BTreeMap<&str, Vec<(usize, &str)>> = BTreeMap::new();
        for (i, (place, state)) in self.tokens(gm).into_iter().enumerate() {
            groups.entry(place).or_default().push((i, state));
        }
        let mut consumed = vec![false; gm.state.len()];
        let mut cursor = 0;
        for place in self.base.places() {
            let count = t.pre.count(place) as usize;
            if count == 0 {
                continue;
            }
            let group = groups.get(place.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            for needed_state in &needed[cursor..cursor + count] {
                let found = group.iter().find(|&&(i, state)| !consumed[i] && state == needed_state);
                match found {
                    Some(&(i, _)) => consumed[i] = true,
                    None => return Err(mismatch()),
                }
            }
            cursor += count;
        }

        // Survivors keep their order; produced tokens are appended to their
        // place's group, so they are the youngest.
        let new_shape = rest_shape.sum(&t.post);
        let mut produced_by_place: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut cursor = 0;
        for place in self.base.places() {
            let count = t.post.count(place) as usize;
            if count > 0 {
                produced_by_place.insert(
                    place.as_str(),
                    produced[cursor..cursor + count].iter().map(String::as_str).collect(),
                );
                cursor += count;
            }
        }
        let mut state = Vec::with_capacity(new_shape.total() as usize);
        for place in self.base.places() {
            if let Some(group) = groups.get(place.as_str()) {
                for &(i, s) in group {
                    if !consumed[i] {
                        state.push(s.to_string());
                    }
                }
            }
            if let Some(new_states) = produced_by_place.get(place.as_str()) {
                state.extend(new_states.iter().map(|s| s.to_string()));
            }
        }
        Ok(GuardedMarking { shape: new_shape, state })
    }

    /// Evaluates an execution to a single span from the state product of its
    /// start marking to the state product of its end marking: each step's
    /// span is widened with identities on the untouched tokens, and the
    /// widened steps compose by pullback. The empty execution evaluates to
    /// the identity span.
    pub fn eval_execution(&self, e: &Execution) -> Result<FiniteSpan, GuardedError> {
        let mut m = e.start.clone();
        let mut acc: Option<FiniteSpan> = None;
        for (step, id) in e.steps.iter().enumerate() {
            let t = self
                .base
                .transition(id)
                .ok_or_else(|| GuardedError::UnknownTransition(id.clone()))?;
            let rest = m.diff(&t.pre).ok_or_else(|| GuardedError::NotEnabledAt {
                step,
                transition: id.clone(),
            })?;
            let step_span = self.step_span(id, &m, &rest)?;
            acc = Some(match acc {
                None => step_span,
                Some(prev) => prev
                    .compose(&step_span)
                    .expect("step spans share the intermediate state product"),
            });
            m = rest.sum(&t.post);
        }
        match acc {
            Some(span) => Ok(span),
            None => Ok(FiniteSpan::identity(self.eval_product(&e.start)?.set())),
        }
    }

    /// The span of one firing of `transition` at `m`, widened with
    /// identities on the untouched tokens (`rest` = `m` minus the
    /// precondition). When nothing is untouched this is the transition's
    /// span verbatim.
    fn step_span(
        &self,
        transition: &str,
        m: &Multiset,
        rest: &Multiset,
    ) -> Result<FiniteSpan, GuardedError> {
        let t = self.base.transition(transition).expect("caller resolved the transition");
        let span = &self.spans[transition];
        if rest.is_empty() {
            return Ok(span.clone());
        }
        let pre_product = &self.pre_products[transition];
        let post_product = &self.post_products[transition];
        let rest_product = self.eval_product(rest)?;
        let left_product = self.eval_product(m)?;
        let right_product = self.eval_product(&rest.sum(&t.post))?;

        // For each place: how many slots the consumed prefix takes, versus
        // slots carried by the untouched remainder and the produced suffix.
        let mut apex = Vec::new();
        let mut left_leg = BTreeMap::new();
        let mut right_leg = BTreeMap::new();
        for s in span.apex().iter() {
            let needed = pre_product
                .components(span.left(s).expect("legs are total"))
                .expect("left legs land in the precondition product");
            let produced = post_product
                .components(span.right(s).expect("legs are total"))
                .expect("right legs land in the postcondition product");
            for (r_id, r_components) in rest_product.iter() {
                // Assemble the full left tuple over the slots of `m`:
                // consumed slots first within each place, then untouched.
                let left_tuple = interleave(
                    self.base.places(),
                    &t.pre,
                    rest,
                    needed,
                    r_components,
                );
                // And the full right tuple over the slots of the successor:
                // untouched slots first within each place, then produced.
                let right_tuple = interleave(
                    self.base.places(),
                    rest,
                    &t.post,
                    r_components,
                    produced,
                );
                let left_id = left_product
                    .id_of(left_tuple.iter().map(String::as_str))
                    .expect("interleaved tuples belong to the full product");
                let right_id = right_product
                    .id_of(right_tuple.iter().map(String::as_str))
                    .expect("interleaved tuples belong to the full product");
                let id = format!("{s};{r_id}");
                left_leg.insert(id.clone(), left_id.to_string());
                right_leg.insert(id.clone(), right_id.to_string());
                apex.push(id);
            }
        }
        Ok(FiniteSpan::new(
            left_product.set().clone(),
            right_product.set().clone(),
            FiniteSet::new(apex).expect("apex ids pair distinct ids"),
            left_leg,
            right_leg,
        )
        .expect("constructed legs are total and land in the feet"))
    }
}

impl serde::Serialize for GuardedNet {
    /// Serializes to the wire format: `places`, `transitions`, `place_sets`
    /// as element lists, and `transition_spans` with each leg value decoded
    /// back into its per-slot component tuple.
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;

        #[derive(Serialize)]
        struct SpanWire<'a> {
            apex: &'a [String],
            left: BTreeMap<&'a str, &'a [String]>,
            right: BTreeMap<&'a str, &'a [String]>,
        }

        let mut st = serializer.serialize_struct("GuardedNet", 4)?;
        st.serialize_field("places", self.base.places())?;
        st.serialize_field("transitions", self.base.transitions())?;
        let sets: BTreeMap<&String, &[String]> = self
            .place_sets
            .iter()
            .map(|(place, set)| (place, set.elements()))
            .collect();
        st.serialize_field("place_sets", &sets)?;
        let spans: BTreeMap<&String, SpanWire> = self
            .spans
            .iter()
            .map(|(t, span)| {
                let left = span
                    .apex()
                    .iter()
                    .map(|s| {
                        let leg = span.left(s).expect("legs are total");
                        let components = self.pre_products[t]
                            .components(leg)
                            .expect("left legs land in the precondition product");
                        (s, components)
                    })
                    .collect();
                let right = span
                    .apex()
                    .iter()
                    .map(|s| {
                        let leg = span.right(s).expect("legs are total");
                        let components = self.post_products[t]
                            .components(leg)
                            .expect("right legs land in the postcondition product");
                        (s, components)
                    })
                    .collect();
                (t, SpanWire { apex: span.apex().elements(), left, right })
            })
            .collect();
        st.serialize_field("transition_spans", &spans)?;
        st.end()
    }
}

/// Merges two per-place component lists into one tuple over the slots of
/// `first + second`: for each place in declaration order, the components of
/// `first`'s slots precede the components of `second`'s slots.
fn interleave(
    place_order: &[String],
    first: &Multiset,
    second: &Multiset,
    first_components: &[String],
    second_components: &[String],
) -> Vec<String> {
    let mut out = Vec::with_capacity(first_components.len() + second_components.len());
    let mut first_cursor = 0;
    let mut second_cursor = 0;
    for place in place_order {
        let n_first = first.count(place) as usize;
        let n_second = second.count(place) as usize;
        out.extend(first_components[first_cursor..first_cursor + n_first].iter().cloned());
        out.extend(second_components[second_cursor..second_cursor + n_second].iter().cloned());
        first_cursor += n_first;
        second_cursor += n_second;
    }
    out
}
