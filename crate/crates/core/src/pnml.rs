//! PNML import/export for flat nets.
//!
//! Export emits a single place/transition net in the PNML 2009 core model:
//! one `<place>` per place (with `<initialMarking>` when the start marking
//! holds tokens there), one `<transition>` per transition, and one `<arc>`
//! per entry of a pre- or postcondition, with `<inscription>` carrying
//! weights greater than one. XML ids must be NCNames, so ids are sanitized
//! (conservatively, to `[A-Za-z0-9_.-]` with a safe first character) and
//! the original id is kept in `<name><text>`; import prefers the name text
//! over the XML id, which makes an export/import round trip restore the
//! net exactly.

use std::collections::BTreeSet;
use std::path::Path;

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::multiset::Multiset;
use crate::net::{Marking, PetriNet, Transition};

/// Why a PNML document could not be produced or read.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PnmlError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("xml: {0}")]
    Xml(String),
    #[error("{0}")]
    Invalid(String),
}

/// Rewrites `id` into an unused NCName, conservatively: characters outside
/// `[A-Za-z0-9_.-]` become `_`, a leading digit, `.`, or `-` is shielded,
/// and collisions pick up a numeric suffix.
fn sanitize_ncname(id: &str, used: &mut BTreeSet<String>) -> String {
    let mut out = String::with_capacity(id.len());
    for c in id.chars() {
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-' {
            out.push(c);
        } else {
            out.push('_');
        }
    }
    if out.is_empty() {
        out.push('n');
    }
    if out.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-') {
        out.insert(0, 'n');
    }
    let mut candidate = out.clone();
    let mut k = 1;
    while !used.insert(candidate.clone()) {
        k += 1;
        candidate = format!("{out}-{k}");
    }
    candidate
}

/// Renders `net` with `initial` as its start marking into a PNML document.
pub fn pnml_to_string(net: &PetriNet, initial: &Marking) -> Result<String, PnmlError> {
    net.validate_marking(initial).map_err(|e| PnmlError::Invalid(e.to_string()))?;

    let mut used = BTreeSet::from(["net1".to_string(), "page1".to_string()]);
    let place_ids: Vec<String> =
        net.places().iter().map(|p| sanitize_ncname(p, &mut used)).collect();
    let transition_ids: Vec<String> =
        net.transitions().iter().map(|t| sanitize_ncname(&t.id, &mut used)).collect();
    let xml_place_id = |place: &str| -> &str {
        let i = net.places().iter().position(|p| p == place).expect("marking was validated");
        &place_ids[i]
    };

    let mut out = String::new();
    let mut line = |depth: usize, text: &str| {
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str(text);
        out.push('\n');
    };
    line(0, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    line(0, r#"<pnml xmlns="http://www.pnml.org/version-2009/grammar/pnml">"#);
    line(1, r#"<net id="net1" type="http://www.pnml.org/version-2009/grammar/ptnet">"#);
    line(2, r#"<page id="page1">"#);
    for (place, xml_id) in net.places().iter().zip(&place_ids) {
        line(3, &format!(r#"<place id="{xml_id}">"#));
        line(4, &format!("<name><text>{}</text></name>", escape(place)));
        let tokens = initial.count(place);
        if tokens > 0 {
            line(4, &format!("<initialMarking><text>{tokens}</text></initialMarking>"));
        }
        line(3, "</place>");
    }
    for (t, xml_id) in net.transitions().iter().zip(&transition_ids) {
        line(3, &format!(r#"<transition id="{xml_id}">"#));
        line(4, &format!("<name><text>{}</text></name>", escape(&t.id)));
        line(3, "</transition>");
    }
    let mut arc_seq = 0usize;
    let mut next_arc_id = || loop {
        arc_seq += 1;
        let candidate = format!("arc{arc_seq}");
        if used.insert(candidate.clone()) {
            break candidate;
        }
    };
    for (t, t_xml) in net.transitions().iter().zip(&transition_ids) {
        for (place, weight) in t.pre.iter() {
            emit_arc(&mut line, &next_arc_id(), xml_place_id(place), t_xml, weight);
        }
        for (place, weight) in t.post.iter() {
            emit_arc(&mut line, &next_arc_id(), t_xml, xml_place_id(place), weight);
        }
    }
    line(2, "</page>");
    line(1, "</net>");
    line(0, "</pnml>");
    drop(line);
    Ok(out)
}

fn emit_arc(
    line: &mut impl FnMut(usize, &str),
    id: &str,
    source: &str,
    target: &str,
    weight: u64,
) {
    if weight > 1 {
        line(3, &format!(r#"<arc id="{id}" source="{source}" target="{target}">"#));
        line(4, &format!("<inscription><text>{weight}</text></inscription>"));
        line(3, "</arc>");
    } else {
        line(3, &format!(r#"<arc id="{id}" source="{source}" target="{target}"/>"#));
    }
}

/// Writes `net` with `initial` as its start marking to a PNML file.
pub fn export_pnml(
    net: &PetriNet,
    initial: &Marking,
    path: impl AsRef<Path>,
) -> Result<(), PnmlError> {
    let text = pnml_to_string(net, initial)?;
    std::fs::write(path.as_ref(), text)
        .map_err(|e| PnmlError::Io(format!("{}: {e}", path.as_ref().display())))
}

#[derive(Default)]
struct PlaceRow {
    xml_id: String,
    name: Option<String>,
    initial: u64,
}

#[derive(Default)]
struct TransitionRow {
    xml_id: String,
    name: Option<String>,
}

struct ArcRow {
    source: String,
    target: String,
    weight: u64,
}

/// Which node the parser is currently inside.
enum Holder {
    Place,
    Transition,
    Arc,
}

/// Which `<text>` payload is being collected.
#[derive(Clone, Copy, PartialEq)]
enum TextSlot {
    Name,
    InitialMarking,
    Inscription,
}

/// Parses a PNML document into a net and its initial marking. Node
/// identity is taken from `<name><text>` when present and non-empty, from
/// the XML id otherwise; places, transitions, and arcs from every page are
/// combined, and duplicate arcs between the same pair add their weights.
pub fn pnml_from_str(text: &str) -> Result<(PetriNet, Marking), PnmlError> {
    let mut reader = Reader::from_str(text);
    let xml_err = |e: quick_xml::Error| PnmlError::Xml(e.to_string());

    let mut places: Vec<PlaceRow> = Vec::new();
    let mut transitions: Vec<TransitionRow> = Vec::new();
    let mut arcs: Vec<ArcRow> = Vec::new();
    let mut holder: Option<Holder> = None;
    let mut slot: Option<TextSlot> = None;
    let mut collecting = false;
    let mut buffer = String::new();

    let attr = |e: &quick_xml::events::BytesStart, name: &str| -> Result<Option<String>, PnmlError> {
        match e.try_get_attribute(name) {
            Ok(Some(a)) => {
                Ok(Some(a.unescape_value().map_err(|e| PnmlError::Xml(e.to_string()))?.into_owned()))
            }
            Ok(None) => Ok(None),
            Err(e) => Err(PnmlError::Xml(e.to_string())),
        }
    };
    let required = |e: &quick_xml::events::BytesStart, name: &str| -> Result<String, PnmlError> {
        attr(e, name)?.ok_or_else(|| {
            PnmlError::Invalid(format!(
                "<{}> is missing its `{name}` attribute",
                String::from_utf8_lossy(e.local_name().as_ref())
            ))
        })
    };

    loop {
        let event = reader.read_event().map_err(xml_err)?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                match e.local_name().as_ref() {
                    b"place" => {
                        places.push(PlaceRow { xml_id: required(e, "id")?, ..Default::default() });
                        if !is_empty {
                            holder = Some(Holder::Place);
                        }
                    }
                    b"transition" => {
                        transitions
                            .push(TransitionRow { xml_id: required(e, "id")?, ..Default::default() });
                        if !is_empty {
                            holder = Some(Holder::Transition);
                        }
                    }
                    b"arc" => {
                        arcs.push(ArcRow {
                            source: required(e, "source")?,
                            target: required(e, "target")?,
                            weight: 1,
                        });
                        if !is_empty {
                            holder = Some(Holder::Arc);
                        }
                    }
                    b"name" if !is_empty => slot = Some(TextSlot::Name),
                    b"initialMarking" if !is_empty => slot = Some(TextSlot::InitialMarking),
                    b"inscription" if !is_empty => slot = Some(TextSlot::Inscription),
                    b"text" if !is_empty => {
                        if slot.is_some() && holder.is_some() {
                            collecting = true;
                            buffer.clear();
                        }
                    }
                    // Tool extensions and layout may contain arbitrary
                    // elements; skip their subtrees wholesale.
                    b"toolspecific" | b"graphics" if !is_empty => {
                        reader.read_to_end(e.name()).map_err(xml_err)?;
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if collecting {
                    buffer.push_str(&t.unescape().map_err(xml_err)?);
                }
            }
            Event::CData(t) => {
                if collecting {
                    buffer.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(e) => match e.local_name().as_ref() {
                b"place" | b"transition" | b"arc" => holder = None,
                b"name" | b"initialMarking" | b"inscription" => slot = None,
                b"text" if collecting => {
                    collecting = false;
                    let value = buffer.trim().to_string();
                    match (slot, &holder) {
                        (Some(TextSlot::Name), Some(Holder::Place)) => {
                            places.last_mut().expect("inside a place").name = Some(value);
                        }
                        (Some(TextSlot::Name), Some(Holder::Transition)) => {
                            transitions.last_mut().expect("inside a transition").name = Some(value);
                        }
                        (Some(TextSlot::InitialMarking), Some(Holder::Place)) => {
                            places.last_mut().expect("inside a place").initial =
                                parse_count(&value, "initial marking")?;
                        }
                        (Some(TextSlot::Inscription), Some(Holder::Arc)) => {
                            arcs.last_mut().expect("inside an arc").weight =
                                parse_count(&value, "arc inscription")?;
                        }
                        _ => {}
                    }
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }

    build_net(places, transitions, arcs)
}

fn parse_count(text: &str, what: &str) -> Result<u64, PnmlError> {
    text.parse::<u64>()
        .map_err(|_| PnmlError::Invalid(format!("{what} `{text}` is not a whole number")))
}

fn build_net(
    places: Vec<PlaceRow>,
    transitions: Vec<TransitionRow>,
    arcs: Vec<ArcRow>,
) -> Result<(PetriNet, Marking), PnmlError> {
    let resolved = |xml_id: &str, name: &Option<String>| -> String {
        match name {
            Some(n) if !n.is_empty() => n.clone(),
            _ => xml_id.to_string(),
        }
    };

    // Map XML ids to resolved ids, remembering which side each belongs to.
    let mut by_xml_id: std::collections::BTreeMap<&str, (bool, String)> =
        std::collections::BTreeMap::new();
    for row in &places {
        let id = resolved(&row.xml_id, &row.name);
        if by_xml_id.insert(&row.xml_id, (true, id)).is_some() {
            return Err(PnmlError::Invalid(format!("duplicate node id `{}`", row.xml_id)));
        }
    }
    for row in &transitions {
        let id = resolved(&row.xml_id, &row.name);
        if by_xml_id.insert(&row.xml_id, (false, id)).is_some() {
            return Err(PnmlError::Invalid(format!("duplicate node id `{}`", row.xml_id)));
        }
    }

    let mut pre: std::collections::BTreeMap<&str, Multiset> = std::collections::BTreeMap::new();
    let mut post: std::collections::BTreeMap<&str, Multiset> = std::collections::BTreeMap::new();
    for arc in &arcs {
        let source = by_xml_id
            .get(arc.source.as_str())
            .ok_or_else(|| PnmlError::Invalid(format!("arc source `{}` is not a node", arc.source)))?;
        let target = by_xml_id
            .get(arc.target.as_str())
            .ok_or_else(|| PnmlError::Invalid(format!("arc target `{}` is not a node", arc.target)))?;
        match (source, target) {
            ((true, place), (false, _)) => {
                pre.entry(arc.target.as_str()).or_default().add(place.clone(), arc.weight);
            }
            ((false, _), (true, place)) => {
                post.entry(arc.source.as_str()).or_default().add(place.clone(), arc.weight);
            }
            _ => {
                return Err(PnmlError::Invalid(format!(
                    "arc `{}` -> `{}` does not connect a place and a transition",
                    arc.source, arc.target
                )));
            }
        }
    }

    let net = PetriNet::new(
        places.iter().map(|row| resolved(&row.xml_id, &row.name)).collect::<Vec<_>>(),
        transitions
            .iter()
            .map(|row| {
                Transition::new(
                    resolved(&row.xml_id, &row.name),
                    pre.remove(row.xml_id.as_str()).unwrap_or_default(),
                    post.remove(row.xml_id.as_str()).unwrap_or_default(),
                )
            })
            .collect(),
    )
    .map_err(|e| PnmlError::Invalid(e.to_string()))?;

    let mut initial = Marking::new();
    for row in &places {
        if row.initial > 0 {
            initial.add(resolved(&row.xml_id, &row.name), row.initial);
        }
    }
    Ok((net, initial))
}

/// Reads a PNML file into a net and its initial marking.
pub fn import_pnml(path: impl AsRef<Path>) -> Result<(PetriNet, Marking), PnmlError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| PnmlError::Io(format!("{}: {e}", path.as_ref().display())))?;
    pnml_from_str(&text)
}
