//! Bounded breadth-first reachability search over markings.

use std::collections::{HashMap, VecDeque};

use crate::multiset::Multiset;
use crate::net::{Execution, Marking, PetriNet};

impl PetriNet {
    /// Searches for a firing sequence of length at most `max_steps` from
    /// `from` to `to`. Returns a shortest witness, or `None` when the target
    /// is not reachable within the bound (which says nothing about longer
    /// sequences).
    ///
    /// The search is breadth-first and expands transitions in declaration
    /// order, so the witness for a given net and bound is deterministic.
    pub fn reachable_bounded(
        &self,
        from: &Marking,
        to: &Marking,
        max_steps: usize,
    ) -> Option<Execution> {
        if from == to {
            return Some(Execution::empty(from.clone()));
        }
        // Arena of discovered markings; `seen` maps a marking to its arena
        // slot, and each node remembers the edge that discovered it.
        let mut nodes: Vec<(Multiset, Option<(usize, usize)>)> = vec![(from.clone(), None)];
        let mut seen: HashMap<Multiset, usize> = HashMap::from([(from.clone(), 0)]);
        let mut frontier: VecDeque<(usize, usize)> = VecDeque::from([(0, 0)]);

        while let Some((node, depth)) = frontier.pop_front() {
            if depth == max_steps {
                continue;
            }
            let marking = nodes[node].0.clone();
            for (ti, t) in self.transitions().iter().enumerate() {
                let Some(rest) = marking.diff(&t.pre) else { continue };
                let next = rest.sum(&t.post);
                if seen.contains_key(&next) {
                    continue;
                }
                let slot = nodes.len();
                nodes.push((next.clone(), Some((node, ti))));
                seen.insert(next.clone(), slot);
                if next == *to {
                    return Some(self.unwind(from, &nodes, slot));
                }
                frontier.push_back((slot, depth + 1));
            }
        }
        None
    }

    fn unwind(
        &self,
        from: &Marking,
        nodes: &[(Multiset, Option<(usize, usize)>)],
        mut slot: usize,
    ) -> Execution {
        let mut steps = Vec::new();
        while let Some((parent, ti)) = nodes[slot].1 {
            steps.push(self.transitions()[ti].id.clone());
            slot = parent;
        }
        steps.reverse();
        Execution::new(from.clone(), steps)
    }
}
