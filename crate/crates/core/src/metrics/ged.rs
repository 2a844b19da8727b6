//! Exact graph edit distance under the uniform unlabeled cost model:
//! node and edge insertions/deletions cost 1, substitutions cost 0, and the
//! target is any graph isomorphic to the reference.
//!
//! Under that model the distance reduces to
//!
//! ```text
//! ged(g, h) = |n_g - n_h| + m_g + m_h - 2 * maxAlign(g, h)
//! ```
//!
//! where `maxAlign` is the largest number of edges of the smaller graph that
//! an injective node mapping into the larger graph can place onto edges of
//! the larger graph (mapping every node of the smaller side is never worse
//! than deleting one node and inserting another: it saves two node edits and
//! edge costs can only shrink). The search for `maxAlign` is a depth-first
//! branch and bound over injective mappings with an upper bound on the edges
//! still alignable, candidate ordering by immediate gain, and symmetry
//! pruning over interchangeable target nodes.
//!
//! Pairs where both graphs have at most [`EXACT_NODE_LIMIT`] nodes are always
//! searched to completion; larger pairs respect the time budget and degrade
//! to the best alignment found so far, reported with `exact == false`.

use crate::graph::TemporalGraph;
use std::collections::HashMap;
use std::time::{Duration, Instant};

/// Node count up to which the search ignores the time budget.
pub const EXACT_NODE_LIMIT: usize = 10;

/// Default per-pair search budget.
pub const DEFAULT_BUDGET: Duration = Duration::from_secs(10);

/// Largest node count the bitset search representation supports. Pairs
/// beyond it (far above every corpus cap) fall back to a greedy bound.
const MAX_BITSET_NODES: usize = 64;

const DEADLINE_CHECK_MASK: u64 = 0xFFF;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GedResult {
    pub value: f64,
    pub exact: bool,
}

struct BitGraph {
    n: usize,
    m: usize,
    out: Vec<u64>,
    inc: Vec<u64>,
}

impl BitGraph {
    fn from_graph(g: &TemporalGraph) -> Option<Self> {
        let n = g.nodes.len();
        if n > MAX_BITSET_NODES {
            return None;
        }
        let index: HashMap<_, usize> = g.nodes.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let mut out = vec![0u64; n];
        let mut inc = vec![0u64; n];
        for (s, d) in &g.edges {
            let (a, b) = (index[s], index[d]);
            out[a] |= 1 << b;
            inc[b] |= 1 << a;
        }
        Some(BitGraph {
            n,
            m: g.edges.len(),
            out,
            inc,
        })
    }

    fn degree(&self, v: usize) -> u32 {
        self.out[v].count_ones() + self.inc[v].count_ones()
    }
}

/// Reorders the source graph so that node `d` is assigned at search depth
/// `d`: highest degree first, then nodes with the most edges into the
/// already-ordered prefix, which keeps the bound tight early.
fn search_order(g: &BitGraph) -> Vec<usize> {
    let mut order = Vec::with_capacity(g.n);
    let mut placed = 0u64;
    for _ in 0..g.n {
        let v = (0..g.n)
            .filter(|v| placed & (1 << v) == 0)
            .max_by_key(|&v| {
                let attached =
                    (g.out[v] & placed).count_ones() + (g.inc[v] & placed).count_ones();
                (attached, g.degree(v), std::cmp::Reverse(v))
            })
            .unwrap();
        order.push(v);
        placed |= 1 << v;
    }
    order
}

/// Groups target nodes into interchangeability classes: `v` and `w` share a
/// class iff swapping them is an automorphism of the target graph. During
/// the search only one unused member per class is branched on.
#[allow(clippy::needless_range_loop)]
fn swap_classes(g: &BitGraph) -> Vec<usize> {
    let mut class = (0..g.n).collect::<Vec<_>>();
    for v in 0..g.n {
        if class[v] != v {
            continue;
        }
        for w in (v + 1)..g.n {
            if class[w] != w {
                continue;
            }
            let clear = !((1u64 << v) | (1u64 << w));
            let out_match = (g.out[v] & clear) == (g.out[w] & clear);
            let in_match = (g.inc[v] & clear) == (g.inc[w] & clear);
            let mutual = (g.out[v] >> w) & 1 == (g.out[w] >> v) & 1;
            let loops_back = (g.inc[v] >> w) & 1 == (g.inc[w] >> v) & 1;
            if out_match && in_match && mutual && loops_back {
                class[w] = v;
            }
        }
    }
    class
}

struct Search<'a> {
    small: &'a BitGraph,
    large: &'a BitGraph,
    order: Vec<usize>,
    class: Vec<usize>,
    img: Vec<usize>,
    used: u64,
    best: usize,
    max_possible: usize,
    deadline: Option<Instant>,
    expansions: u64,
    timed_out: bool,
}

impl Search<'_> {
    /// Edges of the small graph gained by mapping `u` onto `cand`, plus the
    /// bound bookkeeping deltas (small edges closed, large edges consumed).
    fn assignment_delta(&self, u: usize, cand: usize, assigned: u64) -> (usize, usize, usize) {
        let mut aligned = 0;
        let mut closed_small = 0;
        let mut targets = self.small.out[u] & assigned;
        while targets != 0 {
            let w = targets.trailing_zeros() as usize;
            targets &= targets - 1;
            closed_small += 1;
            if self.large.out[cand] & (1 << self.img[w]) != 0 {
                aligned += 1;
            }
        }
        let mut sources = self.small.inc[u] & assigned;
        while sources != 0 {
            let w = sources.trailing_zeros() as usize;
            sources &= sources - 1;
            closed_small += 1;
            if self.large.inc[cand] & (1 << self.img[w]) != 0 {
                aligned += 1;
            }
        }
        let closed_large = ((self.large.out[cand] & self.used).count_ones()
            + (self.large.inc[cand] & self.used).count_ones()) as usize;
        (aligned, closed_small, closed_large)
    }

    fn dfs(
        &mut self,
        depth: usize,
        assigned: u64,
        aligned: usize,
        closed_small: usize,
        closed_large: usize,
    ) {
        if self.timed_out || self.best == self.max_possible {
            return;
        }
        self.expansions += 1;
        if let Some(deadline) = self.deadline {
            if self.expansions & DEADLINE_CHECK_MASK == 0 && Instant::now() >= deadline {
                self.timed_out = true;
                return;
            }
        }
        if depth == self.order.len() {
            if aligned > self.best {
                self.best = aligned;
            }
            return;
        }
        let open_small = self.small.m - closed_small;
        let open_large = self.large.m - closed_large;
        if aligned + open_small.min(open_large) <= self.best {
            return;
        }

        let u = self.order[depth];
        let mut candidates: Vec<(usize, usize, usize, usize)> = Vec::new();
        let mut seen_class = 0u64;
        for cand in 0..self.large.n {
            if self.used & (1 << cand) != 0 {
                continue;
            }
            let class = self.class[cand];
            if seen_class & (1 << class) != 0 {
                continue;
            }
            seen_class |= 1 << class;
            let (gain, d_small, d_large) = self.assignment_delta(u, cand, assigned);
            candidates.push((gain, cand, d_small, d_large));
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for (gain, cand, d_small, d_large) in candidates {
            self.img[u] = cand;
            self.used |= 1 << cand;
            self.dfs(
                depth + 1,
                assigned | (1 << u),
                aligned + gain,
                closed_small + d_small,
                closed_large + d_large,
            );
            self.used &= !(1 << cand);
            if self.timed_out || self.best == self.max_possible {
                return;
            }
        }
    }
}

/// Maximum alignable edge count between `small` and `large`
/// (`small.n <= large.n`), with a timeout flag when the budget ran out.
fn max_alignment(
    small: &BitGraph,
    large: &BitGraph,
    large_classes: Vec<usize>,
    deadline: Option<Instant>,
) -> (usize, bool) {
    if small.m == 0 || large.m == 0 {
        return (0, false);
    }
    let mut search = Search {
        order: search_order(small),
        class: large_classes,
        img: vec![usize::MAX; small.n],
        used: 0,
        best: 0,
        max_possible: small.m.min(large.m),
        deadline,
        expansions: 0,
        timed_out: false,
        small,
        large,
    };
    search.dfs(0, 0, 0, 0, 0);
    (search.best, search.timed_out)
}

/// A cheap complete alignment for graphs too large for the bitset search:
/// sorts both node sets by degree and pairs them off positionally.
fn oversize_bound(gold: &TemporalGraph, pred: &TemporalGraph) -> GedResult {
    if gold == pred {
        return GedResult {
            value: 0.0,
            exact: true,
        };
    }
    let (small, large) = if gold.nodes.len() <= pred.nodes.len() {
        (gold, pred)
    } else {
        (pred, gold)
    };
    let large_edges: std::collections::HashSet<_> = large.edges.iter().collect();
    let aligned = small
        .edges
        .iter()
        .filter(|e| large_edges.contains(e))
        .count();
    let value = (large.nodes.len() - small.nodes.len()
        + small.edges.len()
        + large.edges.len()
        - 2 * aligned) as f64;
    GedResult {
        value,
        exact: false,
    }
}

/// Minimum edit cost transforming `pred` into a graph isomorphic to `gold`.
///
/// Exact whenever the search completes; pairs with more than
/// [`EXACT_NODE_LIMIT`] nodes on either side that exhaust `budget` report
/// the best upper bound found with `exact == false`. Never fails.
pub fn graph_edit_distance(
    gold: &TemporalGraph,
    pred: &TemporalGraph,
    budget: Option<Duration>,
) -> GedResult {
    let (Some(a), Some(b)) = (BitGraph::from_graph(gold), BitGraph::from_graph(pred)) else {
        return oversize_bound(gold, pred);
    };
    // The smaller graph drives the search; on equal node counts the side
    // with more interchangeable nodes (fewer swap classes) becomes the
    // candidate side, where symmetry pruning collapses the branching.
    let class_count = |classes: &[usize]| {
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.len()
    };
    let (classes_a, classes_b) = (swap_classes(&a), swap_classes(&b));
    let a_is_small = match a.n.cmp(&b.n) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => class_count(&classes_a) >= class_count(&classes_b),
    };
    let (small, large, large_classes) = if a_is_small {
        (&a, &b, classes_b)
    } else {
        (&b, &a, classes_a)
    };
    let deadline = if small.n.max(large.n) <= EXACT_NODE_LIMIT {
        None
    } else {
        Some(Instant::now() + budget.unwrap_or(DEFAULT_BUDGET))
    };
    let (aligned, timed_out) = max_alignment(small, large, large_classes, deadline);
    let value = ((large.n - small.n) + small.m + large.m - 2 * aligned) as f64;
    GedResult {
        value,
        exact: !timed_out,
    }
}
