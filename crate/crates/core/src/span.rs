//! Finite spans: an apex set with two total maps into a left and a right
//! foot.
//!
//! Spans compose by pullback (apex pairs whose inner legs agree) and combine
//! in parallel by cartesian product. Composite apex elements get stable
//! generated ids, so two runs of the same computation produce identical
//! values; semantic comparison of spans goes through [`FiniteSpan::leg_pairs`]
//! (the multiset of (left, right) pairs the apex witnesses), which is
//! invariant under renaming apex elements.
//!
//! [`ProductSet`] builds the canonical product of a list of sets: one slot
//! per factor, elements enumerated in odometer order with the last slot
//! varying fastest, each element id spelling out its component tuple.

use std::collections::BTreeMap;

use itertools::Itertools;
use thiserror::Error;

/// Separator for generated composite apex ids; nested composites flatten
/// into one separated list.
const PAIR_SEP: char = ';';

/// A finite set: an ordered list of distinct element ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiniteSet {
    elements: Vec<String>,
}

/// Structural problems found while building sets or spans.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpanError {
    #[error("duplicate element `{0}`")]
    DuplicateElement(String),
    #[error("leg for `{apex}` is missing")]
    MissingLeg { apex: String },
    #[error("leg for `{apex}` maps to `{target}`, which is not in the foot")]
    LegOutsideFoot { apex: String, target: String },
    #[error("legs mention `{0}`, which is not an apex element")]
    LegOffApex(String),
    #[error("feet do not match: right foot of the first span differs from left foot of the second")]
    FootMismatch,
}

impl FiniteSet {
    /// Builds a set from ordered elements, rejecting duplicates.
    pub fn new<S: Into<String>>(elements: Vec<S>) -> Result<Self, SpanError> {
        let elements: Vec<String> = elements.into_iter().map(Into::into).collect();
        let mut seen = std::collections::HashSet::new();
        for e in &elements {
            if !seen.insert(e.clone()) {
                return Err(SpanError::DuplicateElement(e.clone()));
            }
        }
        Ok(FiniteSet { elements })
    }

    /// The one-element set containing only the empty tuple; the unit for
    /// products.
    pub fn unit() -> Self {
        FiniteSet { elements: vec![encode_tuple(std::iter::empty::<&str>())] }
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, element: &str) -> bool {
        self.elements.iter().any(|e| e == element)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(String::as_str)
    }
}

/// Encodes an ordered tuple of component ids as a single element id.
pub fn encode_tuple<'a, I: IntoIterator<Item = &'a str>>(components: I) -> String {
    format!("({})", components.into_iter().join(","))
}

fn pair_id(left: &str, right: &str) -> String {
    format!("{left}{PAIR_SEP}{right}")
}

/// A span: two total maps out of an apex into a left and a right foot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteSpan {
    left_foot: FiniteSet,
    right_foot: FiniteSet,
    apex: FiniteSet,
    left_leg: BTreeMap<String, String>,
    right_leg: BTreeMap<String, String>,
}

impl FiniteSpan {
    /// Builds a span, checking that both legs are total on the apex and land
    /// in their feet.
    pub fn new(
        left_foot: FiniteSet,
        right_foot: FiniteSet,
        apex: FiniteSet,
        left_leg: BTreeMap<String, String>,
        right_leg: BTreeMap<String, String>,
    ) -> Result<Self, SpanError> {
        for (leg, foot) in [(&left_leg, &left_foot), (&right_leg, &right_foot)] {
            for s in apex.iter() {
                match leg.get(s) {
                    None => return Err(SpanError::MissingLeg { apex: s.to_string() }),
                    Some(target) if !foot.contains(target) => {
                        return Err(SpanError::LegOutsideFoot {
                            apex: s.to_string(),
                            target: target.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
            for key in leg.keys() {
                if !apex.contains(key) {
                    return Err(SpanError::LegOffApex(key.clone()));
                }
            }
        }
        Ok(FiniteSpan { left_foot, right_foot, apex, left_leg, right_leg })
    }

    /// The identity span on `foot`: apex = foot, both legs the identity.
    pub fn identity(foot: &FiniteSet) -> Self {
        let legs: BTreeMap<String, String> =
            foot.iter().map(|e| (e.to_string(), e.to_string())).collect();
        FiniteSpan {
            left_foot: foot.clone(),
            right_foot: foot.clone(),
            apex: foot.clone(),
            left_leg: legs.clone(),
            right_leg: legs,
        }
    }

    /// The span with the same feet and an empty apex.
    pub fn empty(left_foot: FiniteSet, right_foot: FiniteSet) -> Self {
        FiniteSpan {
            left_foot,
            right_foot,
            apex: FiniteSet::new(Vec::<String>::new()).expect("empty set is valid"),
            left_leg: BTreeMap::new(),
            right_leg: BTreeMap::new(),
        }
    }

    pub fn left_foot(&self) -> &FiniteSet {
        &self.left_foot
    }

    pub fn right_foot(&self) -> &FiniteSet {
        &self.right_foot
    }

    pub fn apex(&self) -> &FiniteSet {
        &self.apex
    }

    /// Where `apex_element` lands in the left foot.
    pub fn left(&self, apex_element: &str) -> Option<&str> {
        self.left_leg.get(apex_element).map(String::as_str)
    }

    /// Where `apex_element` lands in the right foot.
    pub fn right(&self, apex_element: &str) -> Option<&str> {
        self.right_leg.get(apex_element).map(String::as_str)
    }

    /// The multiset of (left, right) pairs witnessed by the apex. Two spans
    /// with equal feet and equal leg pairs differ only by renaming apex
    /// elements, so this is the semantic comparison key.
    pub fn leg_pairs(&self) -> BTreeMap<(String, String), usize> {
        let mut pairs = BTreeMap::new();
        for s in self.apex.iter() {
            let key = (self.left_leg[s].clone(), self.right_leg[s].clone());
            *pairs.entry(key).or_insert(0) += 1;
        }
        pairs
    }

    /// True when both spans have the same feet and witness the same pairs
    /// with the same multiplicities (apex ids may differ).
    pub fn same_shape(&self, other: &FiniteSpan) -> bool {
        self.left_foot == other.left_foot
            && self.right_foot == other.right_foot
            && self.leg_pairs() == other.leg_pairs()
    }

    /// Sequential composition by pullback: the apex collects every pair of
    /// apex elements whose inner legs meet on the shared foot. Fails unless
    /// `self`'s right foot equals `other`'s left foot.
    pub fn compose(&self, other: &FiniteSpan) -> Result<FiniteSpan, SpanError> {
        if self.right_foot != other.left_foot {
            return Err(SpanError::FootMismatch);
        }
        let mut apex = Vec::new();
        let mut left_leg = BTreeMap::new();
        let mut right_leg = BTreeMap::new();
        for s in self.apex.iter() {
            for u in other.apex.iter() {
                if self.right_leg[s] != other.left_leg[u] {
                    continue;
                }
                let id = pair_id(s, u);
                left_leg.insert(id.clone(), self.left_leg[s].clone());
                right_leg.insert(id.clone(), other.right_leg[u].clone());
                apex.push(id);
            }
        }
        Ok(FiniteSpan {
            left_foot: self.left_foot.clone(),
            right_foot: other.right_foot.clone(),
            apex: FiniteSet::new(apex)?,
            left_leg,
            right_leg,
        })
    }

    /// Parallel composition: feet and apex become cartesian products and the
    /// legs act componentwise.
    pub fn tensor(&self, other: &FiniteSpan) -> FiniteSpan {
        let left_foot = product_of_sets(&self.left_foot, &other.left_foot);
        let right_foot = product_of_sets(&self.right_foot, &other.right_foot);
        let mut apex = Vec::new();
        let mut left_leg = BTreeMap::new();
        let mut right_leg = BTreeMap::new();
        for s in self.apex.iter() {
            for u in other.apex.iter() {
                let id = encode_tuple([s, u]);
                left_leg.insert(id.clone(), encode_tuple([&*self.left_leg[s], &*other.left_leg[u]]));
                right_leg
                    .insert(id.clone(), encode_tuple([&*self.right_leg[s], &*other.right_leg[u]]));
                apex.push(id);
            }
        }
        FiniteSpan {
            left_foot,
            right_foot,
            apex: FiniteSet::new(apex).expect("products of distinct ids stay distinct"),
            left_leg,
            right_leg,
        }
    }
}

fn product_of_sets(a: &FiniteSet, b: &FiniteSet) -> FiniteSet {
    let mut elements = Vec::with_capacity(a.len() * b.len());
    for x in a.iter() {
        for y in b.iter() {
            elements.push(encode_tuple([x, y]));
        }
    }
    FiniteSet::new(elements).expect("products of distinct ids stay distinct")
}

/// The canonical product of an ordered list of labelled factors.
///
/// Keeps the decode table from element ids back to component tuples, which
/// the guarded firing rule and the internalization both rely on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductSet {
    slots: Vec<String>,
    elements: Vec<Vec<String>>,
    ids: FiniteSet,
    index: BTreeMap<String, usize>,
}

impl ProductSet {
    /// Builds the product of `factors`, each a `(label, set)` pair. With no
    /// factors the product is the unit set containing the empty tuple.
    pub fn build(factors: Vec<(String, &FiniteSet)>) -> ProductSet {
        let slots: Vec<String> = factors.iter().map(|(label, _)| label.clone()).collect();
        let elements: Vec<Vec<String>> = factors
            .iter()
            .map(|(_, set)| set.iter().map(str::to_string).collect::<Vec<_>>())
            .multi_cartesian_product_or_unit();
        let ids = FiniteSet::new(
            elements
                .iter()
                .map(|tuple| encode_tuple(tuple.iter().map(String::as_str)))
                .collect::<Vec<_>>(),
        )
        .expect("tuples over distinct components are distinct");
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i))
            .collect();
        ProductSet { slots, elements, ids, index }
    }

    /// The slot labels, one per factor, in order.
    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    /// The product as a plain set of encoded tuple ids.
    pub fn set(&self) -> &FiniteSet {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Decodes an element id into its component tuple.
    pub fn components(&self, id: &str) -> Option<&[String]> {
        self.index.get(id).map(|&i| self.elements[i].as_slice())
    }

    /// Encodes a component tuple into its element id, if the tuple belongs
    /// to the product.
    pub fn id_of<'a, I: IntoIterator<Item = &'a str>>(&self, components: I) -> Option<&str> {
        let id = encode_tuple(components);
        self.index.get(&id).map(|&i| self.ids.elements()[i].as_str())
    }

    /// Iterates `(id, components)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.ids
            .iter()
            .zip(self.elements.iter())
            .map(|(id, tuple)| (id, tuple.as_slice()))
    }
}

/// Like `multi_cartesian_product`, but an empty factor list yields the empty
/// tuple rather than nothing.
trait ProductOrUnit {
    fn multi_cartesian_product_or_unit(self) -> Vec<Vec<String>>;
}

impl<I: Iterator<Item = Vec<String>>> ProductOrUnit for I {
    fn multi_cartesian_product_or_unit(self) -> Vec<Vec<String>> {
        let factors: Vec<Vec<String>> = self.collect();
        if factors.is_empty() {
            return vec![Vec::new()];
        }
        factors.into_iter().multi_cartesian_product().collect()
    }
}
