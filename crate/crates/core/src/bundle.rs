//! The JSON interchange format for nets and bundles.
//!
//! A bundle document is `{"nets": {name: net, ...}, "root": name}`; a bare
//! net object is also accepted and wrapped as a single-net bundle. A net's
//! kind is inferred from its fields: `bindings` makes it hierarchical,
//! `transition_spans` makes it guarded, neither makes it flat. Child nets
//! are referenced by bundle name or written inline; references must be
//! acyclic.
//!
//! Every validation error carries a JSON-pointer path to the offending
//! element. Guarded and hierarchical nets must keep their ids clear of the
//! characters used to build generated identifiers (state-pair places,
//! witness transitions, tuple and run encodings); flat nets are
//! unrestricted.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer};
use thiserror::Error;

use crate::guarded::{state_product, GuardedNet};
use crate::hier::{ChildBinding, HierarchicalNet, NetDef};
use crate::multiset::Multiset;
use crate::net::{Marking, PetriNet, Transition};
use crate::span::{FiniteSet, FiniteSpan, ProductSet};

/// Characters reserved for generated identifiers (`A@a`, `f@s`, `(x,y)`,
/// `a;u1.u2;b`). Ids in guarded and hierarchical nets must avoid them.
pub const RESERVED_ID_CHARS: &[char] = &['@', ';', ',', '.', '(', ')'];

/// Why a document could not be loaded.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BundleError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> BundleError {
    BundleError::Invalid { path: path.into(), message: message.into() }
}

/// Escapes one JSON-pointer token.
fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn join(path: &str, token: &str) -> String {
    format!("{path}/{}", escape(token))
}

/// A transition as written in a document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    id: String,
    #[serde(default)]
    pre: Multiset,
    #[serde(default)]
    post: Multiset,
}

/// A transition span as written: apex elements plus per-element component
/// tuples for both legs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    apex: Vec<String>,
    left: BTreeMap<String, Vec<String>>,
    right: BTreeMap<String, Vec<String>>,
}

/// A child reference: a net name (resolved within the bundle) or an inline
/// net object.
#[derive(Debug, Clone)]
enum RawChild {
    Name(String),
    Inline(Box<RawNet>),
}

impl<'de> Deserialize<'de> for RawChild {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(name) => Ok(RawChild::Name(name)),
            serde_json::Value::Object(_) => serde_json::from_value(value)
                .map(|net| RawChild::Inline(Box::new(net)))
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom("child must be a net name or an inline net object")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBinding {
    child: RawChild,
    play: BTreeMap<String, Marking>,
    stop: BTreeMap<String, Marking>,
}

/// Origin tables as emitted alongside internalized nets; accepted and
/// ignored so that generated output loads back as a plain flat net.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrigin {
    #[serde(default)]
    #[allow(dead_code)]
    places: BTreeMap<String, (String, String)>,
    #[serde(default)]
    #[allow(dead_code)]
    transitions: BTreeMap<String, (String, String)>,
}

/// A net as written in a document, before kind inference and validation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNet {
    places: Vec<String>,
    #[serde(default)]
    transitions: Vec<RawTransition>,
    #[serde(default)]
    place_sets: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    transition_spans: Option<BTreeMap<String, RawSpan>>,
    #[serde(default)]
    bindings: Option<BTreeMap<String, RawBinding>>,
    #[serde(default)]
    #[allow(dead_code)]
    origin: Option<RawOrigin>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    nets: BTreeMap<String, RawNet>,
    root: String,
}

/// A loaded, fully validated collection of named nets with a distinguished
/// root.
#[derive(Debug, Clone)]
pub struct NetBundle {
    nets: BTreeMap<String, Arc<NetDef>>,
    root: String,
}

impl NetBundle {
    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn root_net(&self) -> &Arc<NetDef> {
        &self.nets[&self.root]
    }

    pub fn net(&self, name: &str) -> Option<&Arc<NetDef>> {
        self.nets.get(name)
    }

    pub fn nets(&self) -> &BTreeMap<String, Arc<NetDef>> {
        &self.nets
    }
}

/// Resolves `child: <name>` references while nets are being built.
trait ChildResolver {
    fn resolve(&mut self, name: &str, path: &str) -> Result<Arc<NetDef>, BundleError>;
}

/// Resolver for standalone net documents: name references are refused.
struct NoNamedChildren;

impl ChildResolver for NoNamedChildren {
    fn resolve(&mut self, name: &str, path: &str) -> Result<Arc<NetDef>, BundleError> {
        Err(invalid(
            path,
            format!("child reference `{name}` by name needs a bundle; inline the child net"),
        ))
    }
}

/// Bundle-wide resolver: builds nets on demand, memoizes them, and rejects
/// cyclic references.
struct BundleResolver<'a> {
    raws: &'a BTreeMap<String, RawNet>,
    done: BTreeMap<String, Arc<NetDef>>,
    visiting: Vec<String>,
}

impl ChildResolver for BundleResolver<'_> {
    fn resolve(&mut self, name: &str, path: &str) -> Result<Arc<NetDef>, BundleError> {
        if let Some(done) = self.done.get(name) {
            return Ok(done.clone());
        }
        if self.visiting.iter().any(|v| v == name) {
            return Err(invalid(
                path,
                format!("cyclic child reference: net `{name}` is its own ancestor"),
            ));
        }
        let Some(raw) = self.raws.get(name) else {
            return Err(invalid(path, format!("unknown net `{name}`")));
        };
        self.visiting.push(name.to_string());
        let built = build_net(raw, &join("/nets", name), self)?;
        self.visiting.pop();
        let arc = Arc::new(built);
        self.done.insert(name.to_string(), arc.clone());
        Ok(arc)
    }
}

fn check_reserved(id: &str, path: &str, what: &str) -> Result<(), BundleError> {
    if let Some(c) = id.chars().find(|c| RESERVED_ID_CHARS.contains(c)) {
        return Err(invalid(path, format!("{what} `{id}` contains reserved character `{c}`")));
    }
    Ok(())
}

/// Checks every id that can end up inside a generated identifier.
fn check_reserved_ids(raw: &RawNet, path: &str) -> Result<(), BundleError> {
    for (i, place) in raw.places.iter().enumerate() {
        check_reserved(place, &format!("{path}/places/{i}"), "place id")?;
    }
    for (i, t) in raw.transitions.iter().enumerate() {
        check_reserved(&t.id, &format!("{path}/transitions/{i}/id"), "transition id")?;
    }
    Ok(())
}

fn build_base(raw: &RawNet, path: &str) -> Result<PetriNet, BundleError> {
    let mut places = BTreeSet::new();
    for (i, place) in raw.places.iter().enumerate() {
        if !places.insert(place.as_str()) {
            return Err(invalid(format!("{path}/places/{i}"), format!("duplicate place `{place}`")));
        }
    }
    let mut ids = BTreeSet::new();
    for (i, t) in raw.transitions.iter().enumerate() {
        if !ids.insert(t.id.as_str()) {
            return Err(invalid(
                format!("{path}/transitions/{i}/id"),
                format!("duplicate transition `{}`", t.id),
            ));
        }
        for (side, m) in [("pre", &t.pre), ("post", &t.post)] {
            for place in m.support() {
                if !places.contains(place) {
                    return Err(invalid(
                        join(&format!("{path}/transitions/{i}/{side}"), place),
                        format!("unknown place `{place}`"),
                    ));
                }
            }
        }
    }
    let transitions = raw
        .transitions
        .iter()
        .map(|t| Transition::new(t.id.clone(), t.pre.clone(), t.post.clone()))
        .collect();
    PetriNet::new(raw.places.clone(), transitions)
        .map_err(|e| invalid(path, e.to_string()))
}

fn build_place_sets(
    base: &PetriNet,
    raw_sets: Option<&BTreeMap<String, Vec<String>>>,
    path: &str,
    required_by: &str,
) -> Result<BTreeMap<String, FiniteSet>, BundleError> {
    let Some(raw_sets) = raw_sets else {
        return Err(invalid(path, format!("`{required_by}` requires `place_sets`")));
    };
    let sets_path = join(path, "place_sets");
    for place in base.places() {
        if !raw_sets.contains_key(place) {
            return Err(invalid(&sets_path, format!("missing state set for place `{place}`")));
        }
    }
    let mut sets = BTreeMap::new();
    for (place, elements) in raw_sets {
        let set_path = join(&sets_path, place);
        if !base.has_place(place) {
            return Err(invalid(&set_path, format!("state set for unknown place `{place}`")));
        }
        for (i, element) in elements.iter().enumerate() {
            check_reserved(element, &format!("{set_path}/{i}"), "state")?;
        }
        let set = FiniteSet::new(elements.clone()).map_err(|e| invalid(&set_path, e.to_string()))?;
        sets.insert(place.clone(), set);
    }
    Ok(sets)
}

/// Both state products of a transition, derived from the place sets.
fn transition_products(
    base: &PetriNet,
    sets: &BTreeMap<String, FiniteSet>,
    transition: &str,
) -> (ProductSet, ProductSet) {
    let t = base.transition(transition).expect("transition ids were checked");
    let pre = state_product(base.places(), sets, &t.pre).expect("sets cover all places");
    let post = state_product(base.places(), sets, &t.post).expect("sets cover all places");
    (pre, post)
}

fn check_table_keys<V>(
    table: &BTreeMap<String, V>,
    expected: &PetriNet,
    path: &str,
    what: &str,
) -> Result<(), BundleError> {
    for t in expected.transitions() {
        if !table.contains_key(&t.id) {
            return Err(invalid(path, format!("missing {what} for transition `{}`", t.id)));
        }
    }
    for key in table.keys() {
        if expected.transition(key).is_none() {
            return Err(invalid(join(path, key), format!("{what} for unknown transition `{key}`")));
        }
    }
    Ok(())
}

fn build_guarded(
    raw: &RawNet,
    base: PetriNet,
    raw_spans: &BTreeMap<String, RawSpan>,
    path: &str,
) -> Result<NetDef, BundleError> {
    check_reserved_ids(raw, path)?;
    let sets = build_place_sets(&base, raw.place_sets.as_ref(), path, "transition_spans")?;
    let spans_path = join(path, "transition_spans");
    check_table_keys(raw_spans, &base, &spans_path, "span")?;

    let mut spans = BTreeMap::new();
    for (tid, raw_span) in raw_spans {
        let span_path = join(&spans_path, tid);
        let (pre_product, post_product) = transition_products(&base, &sets, tid);
        for (i, witness) in raw_span.apex.iter().enumerate() {
            check_reserved(witness, &format!("{span_path}/apex/{i}"), "witness id")?;
        }
        let apex = FiniteSet::new(raw_span.apex.clone())
            .map_err(|e| invalid(join(&span_path, "apex"), e.to_string()))?;
        let build_leg = |leg: &BTreeMap<String, Vec<String>>,
                         product: &ProductSet,
                         name: &str,
                         side: &str|
         -> Result<BTreeMap<String, String>, BundleError> {
            let leg_path = join(&span_path, name);
            for witness in apex.iter() {
                if !leg.contains_key(witness) {
                    return Err(invalid(&leg_path, format!("missing {name} leg for witness `{witness}`")));
                }
            }
            let mut out = BTreeMap::new();
            for (witness, components) in leg {
                let target_path = join(&leg_path, witness);
                if !apex.contains(witness) {
                    return Err(invalid(&target_path, format!("leg for unknown witness `{witness}`")));
                }
                if components.len() != product.slots().len() {
                    return Err(invalid(
                        &target_path,
                        format!(
                            "expected {} components for the {side}, found {}",
                            product.slots().len(),
                            components.len()
                        ),
                    ));
                }
                let id = product.id_of(components.iter().map(String::as_str)).ok_or_else(|| {
                    invalid(
                        &target_path,
                        format!("[{}] is not a state tuple of the {side}", components.join(", ")),
                    )
                })?;
                out.insert(witness.clone(), id.to_string());
            }
            Ok(out)
        };
        let left = build_leg(&raw_span.left, &pre_product, "left", "precondition")?;
        let right = build_leg(&raw_span.right, &post_product, "right", "postcondition")?;
        let span =
            FiniteSpan::new(pre_product.set().clone(), post_product.set().clone(), apex, left, right)
                .map_err(|e| invalid(&span_path, e.to_string()))?;
        spans.insert(tid.clone(), span);
    }
    let net = GuardedNet::new(base, sets, spans).map_err(|e| invalid(path, e.to_string()))?;
    Ok(NetDef::Guarded(net))
}

fn build_hier(
    raw: &RawNet,
    base: PetriNet,
    raw_bindings: &BTreeMap<String, RawBinding>,
    path: &str,
    children: &mut dyn ChildResolver,
) -> Result<NetDef, BundleError> {
    check_reserved_ids(raw, path)?;
    let sets = build_place_sets(&base, raw.place_sets.as_ref(), path, "bindings")?;
    let bindings_path = join(path, "bindings");
    check_table_keys(raw_bindings, &base, &bindings_path, "child binding")?;

    let mut bindings = BTreeMap::new();
    for (tid, raw_binding) in raw_bindings {
        let binding_path = join(&bindings_path, tid);
        let child_path = join(&binding_path, "child");
        let child = match &raw_binding.child {
            RawChild::Name(name) => children.resolve(name, &child_path)?,
            RawChild::Inline(raw_child) => {
                Arc::new(build_net(raw_child, &child_path, children)?)
            }
        };
        match &*child {
            NetDef::Guarded(_) => {
                return Err(invalid(
                    &child_path,
                    "guarded nets cannot be children; children must be flat or hierarchical",
                ));
            }
            // Flat-child transition ids appear inside witness encodings.
            NetDef::Flat(net) => {
                for t in net.transitions() {
                    check_reserved(&t.id, &child_path, "child transition id")?;
                }
            }
            NetDef::Hierarchical(_) => {}
        }
        let (pre_product, post_product) = transition_products(&base, &sets, tid);
        for (name, table, product) in [
            ("play", &raw_binding.play, &pre_product),
            ("stop", &raw_binding.stop, &post_product),
        ] {
            let table_path = join(&binding_path, name);
            for id in product.set().iter() {
                if !table.contains_key(id) {
                    return Err(invalid(&table_path, format!("missing boundary marking for `{id}`")));
                }
            }
            for (key, marking) in table {
                let entry_path = join(&table_path, key);
                if !product.set().contains(key) {
                    return Err(invalid(
                        &entry_path,
                        format!("boundary marking for `{key}`, which is not a state tuple of the {name} side"),
                    ));
                }
                for place in marking.support() {
                    if !child.places().contains(&place.to_string()) {
                        return Err(invalid(
                            &entry_path,
                            format!("marking uses unknown child place `{place}`"),
                        ));
                    }
                }
            }
        }
        bindings.insert(
            tid.clone(),
            ChildBinding { child, play: raw_binding.play.clone(), stop: raw_binding.stop.clone() },
        );
    }
    let net = HierarchicalNet::new(base, sets, bindings).map_err(|e| invalid(path, e.to_string()))?;
    Ok(NetDef::Hierarchical(net))
}

/// Builds and validates one net; `path` is its JSON-pointer prefix.
fn build_net(
    raw: &RawNet,
    path: &str,
    children: &mut dyn ChildResolver,
) -> Result<NetDef, BundleError> {
    let base = build_base(raw, path)?;
    match (&raw.transition_spans, &raw.bindings) {
        (Some(_), Some(_)) => Err(invalid(
            path,
            "a net cannot have both `transition_spans` and `bindings`",
        )),
        (Some(spans), None) => build_guarded(raw, base, spans, path),
        (None, Some(bindings)) => build_hier(raw, base, bindings, path, children),
        (None, None) => {
            if raw.place_sets.is_some() {
                return Err(invalid(
                    join(path, "place_sets"),
                    "`place_sets` requires `transition_spans` or `bindings`",
                ));
            }
            Ok(NetDef::Flat(base))
        }
    }
}

/// Parses and validates a single net document (inline children only), as
/// produced by the canonical net serialization.
pub fn net_from_value(value: &serde_json::Value) -> Result<NetDef, BundleError> {
    let raw: RawNet =
        serde_json::from_value(value.clone()).map_err(|e| BundleError::Parse(e.to_string()))?;
    build_net(&raw, "", &mut NoNamedChildren)
}

/// Parses and validates a bundle document or a bare net from a string.
pub fn load_bundle_str(text: &str) -> Result<NetBundle, BundleError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| BundleError::Parse(e.to_string()))?;
    let (raws, root) = if value.get("nets").is_some() {
        let raw: RawBundle =
            serde_json::from_value(value).map_err(|e| BundleError::Parse(e.to_string()))?;
        (raw.nets, raw.root)
    } else {
        let raw: RawNet =
            serde_json::from_value(value).map_err(|e| BundleError::Parse(e.to_string()))?;
        (BTreeMap::from([("net".to_string(), raw)]), "net".to_string())
    };
    if !raws.contains_key(&root) {
        return Err(invalid("/root", format!("root net `{root}` is not defined")));
    }
    let mut resolver = BundleResolver { raws: &raws, done: BTreeMap::new(), visiting: Vec::new() };
    for name in raws.keys() {
        resolver.resolve(name, &join("/nets", name))?;
    }
    Ok(NetBundle { nets: resolver.done, root })
}

/// Loads a bundle document or a bare net from a file.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<NetBundle, BundleError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| BundleError::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_bundle_str(&text)
}
