//! Transition counting and the ergodic core.
//!
//! Observed adjacent state pairs are counted into a weighted adjacency
//! matrix `A` (parallel transitions collapse into integer weights, and
//! self-transitions land on the diagonal). The chain is then restricted to
//! the largest strongly connected component, which removes absorbing states
//! and tendrils that would make the chain reducible. No teleportation is
//! ever added.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::CsrMatrix;
use crate::trajectory::{State, StateSequence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("no state sequences for the day")]
    EmptyDay,
    #[error("graph has {states} state(s) but no transitions")]
    NoEdges { states: usize },
    #[error("graph has no states")]
    EmptyGraph,
}

/// States in canonical order together with the transition counts between
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    states: Vec<State>,
    counts: CsrMatrix<u64>,
}

impl TransitionGraph {
    /// `states` must be strictly increasing and match the matrix size.
    pub fn new(states: Vec<State>, counts: CsrMatrix<u64>) -> TransitionGraph {
        assert_eq!(states.len(), counts.rows());
        assert_eq!(states.len(), counts.cols());
        assert!(
            states.windows(2).all(|w| w[0] < w[1]),
            "states must be sorted and unique"
        );
        TransitionGraph { states, counts }
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn counts(&self) -> &CsrMatrix<u64> {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, state: &State) -> Option<usize> {
        self.states.binary_search(state).ok()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.values().iter().sum()
    }

    pub fn edge_count(&self) -> usize {
        self.counts.nnz()
    }

    /// Sum of the weights of edges inside `members` (sorted indices).
    fn internal_weight(&self, members: &[usize]) -> u64 {
        members
            .iter()
            .flat_map(|&i| self.counts.row_iter(i))
            .filter(|(j, _)| members.binary_search(j).is_ok())
            .map(|(_, w)| w)
            .sum()
    }

    /// Edge list as `from_state,to_state,count` CSV.
    pub fn write_edges_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["from_state", "to_state", "count"])?;
        for (i, j, c) in self.counts.iter() {
            w.write_record([
                self.states[i].to_string(),
                self.states[j].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts every adjacent pair of every sequence.
pub fn build_transition_graph(sequences: &[StateSequence]) -> Result<TransitionGraph, GraphError> {
    if sequences.is_empty() {
        return Err(GraphError::EmptyDay);
    }
    let states: Vec<State> = sequences
        .iter()
        .flat_map(|s| s.states.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |s: &State| states.binary_search(s).expect("state collected above");
    let pairs: Vec<(usize, usize, u64)> = sequences
        .iter()
        .flat_map(|s| s.transitions())
        .map(|(a, b)| (index(a), index(b), 1))
        .collect();
    let n = states.len();
    let counts = CsrMatrix::from_triplets(n, n, pairs);
    Ok(TransitionGraph { states, counts })
}

/// Strongly connected components of a graph given by its CSR structure.
/// Returns the component id of every vertex; ids are numbered in order of
/// each component's smallest vertex, so the numbering is canonical.
pub fn strongly_connected_components<T: Copy>(adj: &CsrMatrix<T>) -> (Vec<usize>, usize) {
    // Pearce's single-array variant, driven by an explicit stack.
    let n = adj.rows();
    let succ = adj.col_indices();
    let ptr = adj.row_ptr();
    let mut rindex = vec![0usize; n];
    let mut root = vec![false; n];
    let mut index = 1usize;
    let mut c = n.wrapping_sub(1);
    let mut done: Vec<usize> = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();

    for start in 0..n {
        if rindex[start] != 0 {
            continue;
        }
        rindex[start] = index;
        index += 1;
        root[start] = true;
        call.push((start, ptr[start]));
        while let Some(&mut (v, ref mut k)) = call.last_mut() {
            if *k < ptr[v + 1] {
                let w = succ[*k];
                *k += 1;
                if rindex[w] == 0 {
                    rindex[w] = index;
                    index += 1;
                    root[w] = true;
                    call.push((w, ptr[w]));
                } else if rindex[w] < rindex[v] {
                    rindex[v] = rindex[w];
                    root[v] = false;
                }
                continue;
            }
            call.pop();
            if root[v] {
                index -= 1;
                while let Some(&w) = done.last() {
                    if rindex[v] > rindex[w] {
                        break;
                    }
                    done.pop();
                    rindex[w] = c;
                    index -= 1;
                }
                rindex[v] = c;
                c = c.wrapping_sub(1);
            } else {
                done.push(v);
            }
            if let Some(&(u, _)) = call.last() {
                if rindex[v] < rindex[u] {
                    rindex[u] = rindex[v];
                    root[u] = false;
                }
            }
        }
    }

    // rindex now holds n-1, n-2, ... per component; renumber canonically.
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut comp = vec![0usize; n];
    let mut next = 0;
    for v in 0..n {
        let id = *remap.entry(rindex[v]).or_insert_with(|| {
            next += 1;
            next - 1
        });
        comp[v] = id;
    }
    (comp, next)
}

#[derive(Debug, Clone)]
pub struct SccResult {
    /// Component id of every state of the input graph.
    pub component_assignment: Vec<usize>,
    pub component_count: usize,
    /// Indices (into the input graph) of the retained states, ascending.
    pub kept: Vec<usize>,
    /// The input restricted to the largest component.
    pub largest: TransitionGraph,
    /// Share of input states that were removed.
    pub dropped_fraction: f64,
}

impl SccResult {
    pub fn largest_component(&self) -> usize {
        self.component_assignment[self.kept[0]]
    }
}

/// Keeps the largest strongly connected component (by state count, then
/// internal transition weight, then smallest state index).
pub fn strongly_connected_restrict(graph: &TransitionGraph) -> Result<SccResult, GraphError> {
    if graph.n() == 0 {
        return Err(GraphError::EmptyGraph);
    }
    if graph.counts.nnz() == 0 {
        return Err(GraphError::NoEdges { states: graph.n() });
    }
    let (comp, count) = strongly_connected_components(&graph.counts);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (v, &c) in comp.iter().enumerate() {
        members[c].push(v);
    }
    // Components are numbered by smallest member, so the first maximum wins
    // the final tie.
    let best = (0..count)
        .map(|c| {
            (
                members[c].len(),
                graph.internal_weight(&members[c]),
                std::cmp::Reverse(c),
            )
        })
        .max()
        .map(|(_, _, std::cmp::Reverse(c))| c)
        .expect("at least one component");
    let kept = std::mem::take(&mut members[best]);
    let largest = TransitionGraph {
        states: kept.iter().map(|&i| graph.states[i].clone()).collect(),
        counts: graph.counts.restrict(&kept),
    };
    let dropped_fraction = (graph.n() - kept.len()) as f64 / graph.n() as f64;
    Ok(SccResult {
        component_assignment: comp,
        component_count: count,
        kept,
        largest,
        dropped_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovedKind {
    /// Only a self-loop leaves the state.
    Absorbing,
    /// Reachable from the retained core, but no path leads back.
    NullRecurrentLike,
    /// Neither of the above.
    OtherComponent,
}

/// Explains why each state outside the retained component was dropped.
pub fn classify_removed_states(
    graph: &TransitionGraph,
    scc: &SccResult,
) -> BTreeMap<usize, RemovedKind> {
    let n = graph.n();
    let mut reach = vec![false; n];
    let mut queue: VecDeque<usize> = scc.kept.iter().copied().collect();
    for &k in &scc.kept {
        reach[k] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &w in graph.counts.row(v).0 {
            if !reach[w] {
                reach[w] = true;
                queue.push_back(w);
            }
        }
    }
    let core = scc.largest_component();
    (0..n)
        .filter(|&v| scc.component_assignment[v] != core)
        .map(|v| {
            let out = graph.counts.row(v).0;
            let kind = if out == [v] {
                RemovedKind::Absorbing
            } else if reach[v] {
                RemovedKind::NullRecurrentLike
            } else {
                RemovedKind::OtherComponent
            };
            (v, kind)
        })
        .collect()
}
