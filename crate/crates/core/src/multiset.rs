//! Finite multisets over symbolic ids.
//!
//! A multiset maps each symbol to a positive count; symbols with count zero
//! are simply absent. That canonical form makes equality and hashing agree
//! with the intended semantics, so multisets can be used directly as search
//! states. Sum is total; difference is partial and signals "not enough
//! tokens" by returning `None` rather than an error, because an undefined
//! difference is ordinary control flow for firing rules, not a fault.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{Deserialize, Deserializer};
use serde::ser::{Serialize, Serializer};

/// A finite multiset of symbols with positive counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Multiset {
    entries: BTreeMap<String, u64>,
}

impl Multiset {
    /// The empty multiset.
    pub fn new() -> Self {
        Multiset::default()
    }

    /// Builds a multiset from `(symbol, count)` pairs, accumulating
    /// duplicates and dropping zero counts.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut m = Multiset::new();
        for (sym, n) in pairs {
            m.add(sym, n);
        }
        m
    }

    /// Adds `n` copies of `sym`.
    pub fn add(&mut self, sym: impl Into<String>, n: u64) {
        if n == 0 {
            return;
        }
        *self.entries.entry(sym.into()).or_insert(0) += n;
    }

    /// The count of `sym` (zero when absent).
    pub fn count(&self, sym: &str) -> u64 {
        self.entries.get(sym).copied().unwrap_or(0)
    }

    /// Total number of elements, counted with multiplicity.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// True when no symbol has a positive count.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates over `(symbol, count)` pairs in symbol order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(s, &n)| (s.as_str(), n))
    }

    /// The distinct symbols, in order.
    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Pointwise sum.
    pub fn sum(&self, other: &Multiset) -> Multiset {
        let mut out = self.clone();
        for (sym, n) in other.iter() {
            out.add(sym, n);
        }
        out
    }

    /// Pointwise difference; `None` when `other` is not covered by `self`.
    pub fn diff(&self, other: &Multiset) -> Option<Multiset> {
        let mut out = self.clone();
        for (sym, n) in other.iter() {
            let have = out.entries.get_mut(sym)?;
            if *have < n {
                return None;
            }
            *have -= n;
            if *have == 0 {
                out.entries.remove(sym);
            }
        }
        Some(out)
    }

    /// True when `other` is pointwise less than or equal to `self`.
    pub fn covers(&self, other: &Multiset) -> bool {
        other.iter().all(|(sym, n)| self.count(sym) >= n)
    }
}

impl<S: Into<String>> FromIterator<(S, u64)> for Multiset {
    fn from_iter<I: IntoIterator<Item = (S, u64)>>(iter: I) -> Self {
        Multiset::from_pairs(iter)
    }
}

impl fmt::Display for Multiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (sym, n)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{sym}: {n}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for Multiset {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Multiset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        // Zero counts in input are legal and mean "absent"; canonicalize here
        // so equality and hashing never see them.
        let raw = BTreeMap::<String, u64>::deserialize(deserializer)?;
        Ok(Multiset {
            entries: raw.into_iter().filter(|&(_, n)| n > 0).collect(),
        })
    }
}
