//! Place/transition nets with multiset pre- and postconditions.
//!
//! A net fixes an ordered list of places and an ordered list of transitions;
//! declaration order is significant because every enumeration in this crate
//! (search, product construction, generated ids) follows it. Markings are
//! multisets over the net's places. A transition is enabled at a marking when
//! its precondition can be subtracted; firing subtracts the precondition and
//! adds the postcondition.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multiset::Multiset;

/// A marking: a multiset of tokens indexed by place id.
pub type Marking = Multiset;

/// A transition with multiset pre- and postconditions over the net's places.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub id: String,
    pub pre: Multiset,
    pub post: Multiset,
}

impl Transition {
    pub fn new(id: impl Into<String>, pre: Multiset, post: Multiset) -> Self {
        Transition { id: id.into(), pre, post }
    }
}

/// Structural problems found while building a net.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("duplicate place id `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition id `{0}`")]
    DuplicateTransition(String),
    #[error("transition `{transition}` uses unknown place `{place}`")]
    UnknownPlace { transition: String, place: String },
    #[error("marking uses unknown place `{0}`")]
    MarkingUnknownPlace(String),
}

/// Why a single firing was refused.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FireError {
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
}

/// Why a multi-step replay was refused, pointing at the first failing step.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("step {step}: {cause}")]
pub struct ReplayError {
    pub step: usize,
    pub cause: FireError,
}

/// A place/transition net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PetriNet {
    places: Vec<String>,
    transitions: Vec<Transition>,
    #[serde(skip)]
    place_index: HashMap<String, usize>,
    #[serde(skip)]
    transition_index: HashMap<String, usize>,
}

impl PetriNet {
    /// Builds a net, rejecting duplicate ids and pre/post entries that
    /// mention undeclared places.
    pub fn new<P: Into<String>>(
        places: Vec<P>,
        transitions: Vec<Transition>,
    ) -> Result<Self, NetError> {
        let places: Vec<String> = places.into_iter().map(Into::into).collect();
        let mut place_index = HashMap::new();
        for (i, p) in places.iter().enumerate() {
            if place_index.insert(p.clone(), i).is_some() {
                return Err(NetError::DuplicatePlace(p.clone()));
            }
        }
        let mut transition_index = HashMap::new();
        for (i, t) in transitions.iter().enumerate() {
            if transition_index.insert(t.id.clone(), i).is_some() {
                return Err(NetError::DuplicateTransition(t.id.clone()));
            }
            for side in [&t.pre, &t.post] {
                for place in side.support() {
                    if !place_index.contains_key(place) {
                        return Err(NetError::UnknownPlace {
                            transition: t.id.clone(),
                            place: place.to_string(),
                        });
                    }
                }
            }
        }
        Ok(PetriNet { places, transitions, place_index, transition_index })
    }

    /// Place ids in declaration order.
    pub fn places(&self) -> &[String] {
        &self.places
    }

    /// Transitions in declaration order.
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Looks up a transition by id.
    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.transition_index.get(id).map(|&i| &self.transitions[i])
    }

    /// True when `id` names a declared place.
    pub fn has_place(&self, id: &str) -> bool {
        self.place_index.contains_key(id)
    }

    /// Checks that a marking only mentions declared places.
    pub fn validate_marking(&self, m: &Marking) -> Result<(), NetError> {
        for place in m.support() {
            if !self.has_place(place) {
                return Err(NetError::MarkingUnknownPlace(place.to_string()));
            }
        }
        Ok(())
    }

    /// True when `transition` can fire at `m`.
    pub fn enabled(&self, m: &Marking, transition: &str) -> Result<bool, FireError> {
        let t = self
            .transition(transition)
            .ok_or_else(|| FireError::UnknownTransition(transition.to_string()))?;
        Ok(m.covers(&t.pre))
    }

    /// Fires `transition` at `m`, producing the successor marking.
    pub fn fire(&self, m: &Marking, transition: &str) -> Result<Marking, FireError> {
        let t = self
            .transition(transition)
            .ok_or_else(|| FireError::UnknownTransition(transition.to_string()))?;
        let rest = m
            .diff(&t.pre)
            .ok_or_else(|| FireError::NotEnabled(transition.to_string()))?;
        Ok(rest.sum(&t.post))
    }

    /// Runs an execution from its start marking, returning the final marking.
    pub fn replay(&self, execution: &Execution) -> Result<Marking, ReplayError> {
        let mut m = execution.start.clone();
        for (step, t) in execution.steps.iter().enumerate() {
            m = self.fire(&m, t).map_err(|cause| ReplayError { step, cause })?;
        }
        Ok(m)
    }

    /// Like [`PetriNet::replay`], but also returns every intermediate
    /// marking: element `i` is the marking after `i` steps.
    pub fn replay_frames(&self, execution: &Execution) -> Result<Vec<Marking>, ReplayError> {
        let mut frames = vec![execution.start.clone()];
        for (step, t) in execution.steps.iter().enumerate() {
            let next = self
                .fire(frames.last().expect("frames is never empty"), t)
                .map_err(|cause| ReplayError { step, cause })?;
            frames.push(next);
        }
        Ok(frames)
    }
}

/// A firing sequence anchored at a start marking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub start: Marking,
    pub steps: Vec<String>,
}

impl Execution {
    pub fn new(start: Marking, steps: Vec<String>) -> Self {
        Execution { start, steps }
    }

    /// The zero-step execution at `start`.
    pub fn empty(start: Marking) -> Self {
        Execution { start, steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Appends `other` to `self`; fails unless `other` starts where `self`
    /// ends under `net`.
    pub fn then(&self, net: &PetriNet, other: &Execution) -> Result<Execution, ReplayError> {
        let end = net.replay(self)?;
        if end != other.start {
            return Err(ReplayError {
                step: self.steps.len(),
                cause: FireError::NotEnabled(
                    other.steps.first().cloned().unwrap_or_default(),
                ),
            });
        }
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        Ok(Execution { start: self.start.clone(), steps })
    }
}
