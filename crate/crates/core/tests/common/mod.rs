//! Brute-force oracles and graph enumeration shared by the integration
//! suites. Everything here is independent of the library's edit-distance
//! search path: costs are counted directly from mapping definitions and
//! isomorphism is decided by trying every bijection.

#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::OnceLock;
use tgg_core::graph::{EventId, TemporalGraph};

/// Node names used by enumerated graphs.
fn node_name(i: usize) -> EventId {
    EventId::new(format!("n{i}"))
}

/// Builds a graph over `n` nodes from an edge bitmask (see [`edge_index`]).
pub fn graph_from_mask(n: usize, mask: u64) -> TemporalGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && mask & (1 << edge_index(n, i, j)) != 0 {
                edges.push((node_name(i), node_name(j)));
            }
        }
    }
    TemporalGraph::from_edges((0..n).map(node_name), &edges)
}

/// Bit position of ordered pair (i, j), i != j, among the n(n-1) pairs.
pub fn edge_index(n: usize, i: usize, j: usize) -> usize {
    i * (n - 1) + if j < i { j } else { j - 1 }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut items, &mut out);
    out
}

fn apply_perm(n: usize, mask: u64, perm: &[usize]) -> u64 {
    let mut out = 0u64;
    let mut rest = mask;
    while rest != 0 {
        let bit = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let i = bit / (n - 1);
        let r = bit % (n - 1);
        let j = if r < i { r } else { r + 1 };
        out |= 1 << edge_index(n, perm[i], perm[j]);
    }
    out
}

/// Canonical form of a digraph bitmask: the minimum over all relabelings.
pub fn canonical_mask(n: usize, mask: u64, perms: &[Vec<usize>]) -> u64 {
    if n <= 1 {
        return mask;
    }
    perms
        .iter()
        .map(|p| apply_perm(n, mask, p))
        .min()
        .unwrap_or(mask)
}

/// All non-isomorphic digraphs on exactly `n` unlabeled nodes, as canonical
/// edge masks. Sizes for n = 0..=5: 1, 1, 3, 16, 218, 9608.
pub fn digraph_classes(n: usize) -> Vec<u64> {
    if n == 0 {
        return vec![0];
    }
    let perms = permutations(n);
    let bits = n * (n - 1);
    use rayon::prelude::*;
    let mut classes: Vec<u64> = (0u64..(1 << bits))
        .into_par_iter()
        .filter(|&mask| canonical_mask(n, mask, &perms) == mask)
        .collect();
    classes.sort_unstable();
    classes
}

/// GED oracle: minimum cost over every partial injective node mapping,
/// counting unmapped nodes on both sides and per-edge deletions/insertions
/// directly from the definition.
pub fn brute_ged(g: &TemporalGraph, h: &TemporalGraph) -> usize {
    let g_nodes: Vec<&EventId> = g.nodes.iter().collect();
    let h_nodes: Vec<&EventId> = h.nodes.iter().collect();
    let g_edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|(s, d)| {
            (
                g_nodes.iter().position(|n| *n == s).unwrap(),
                g_nodes.iter().position(|n| *n == d).unwrap(),
            )
        })
        .collect();
    let h_edge_set: HashSet<(usize, usize)> = h
        .edges
        .iter()
        .map(|(s, d)| {
            (
                h_nodes.iter().position(|n| *n == s).unwrap(),
                h_nodes.iter().position(|n| *n == d).unwrap(),
            )
        })
        .collect();

    fn cost(
        mapping: &[Option<usize>],
        ng: usize,
        nh: usize,
        g_edges: &[(usize, usize)],
        h_edge_set: &HashSet<(usize, usize)>,
    ) -> usize {
        let mapped = mapping.iter().filter(|m| m.is_some()).count();
        let mut common = 0usize;
        for &(u, v) in g_edges {
            if let (Some(fu), Some(fv)) = (mapping[u], mapping[v]) {
                if h_edge_set.contains(&(fu, fv)) {
                    common += 1;
                }
            }
        }
        (ng - mapped) + (nh - mapped) + (g_edges.len() - common) + (h_edge_set.len() - common)
    }

    fn search(
        next: usize,
        mapping: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut usize,
        ng: usize,
        nh: usize,
        g_edges: &[(usize, usize)],
        h_edge_set: &HashSet<(usize, usize)>,
    ) {
        if next == ng {
            let c = cost(mapping, ng, nh, g_edges, h_edge_set);
            if c < *best {
                *best = c;
            }
            return;
        }
        mapping[next] = None;
        search(next + 1, mapping, used, best, ng, nh, g_edges, h_edge_set);
        for candidate in 0..nh {
            if used[candidate] {
                continue;
            }
            used[candidate] = true;
            mapping[next] = Some(candidate);
            search(next + 1, mapping, used, best, ng, nh, g_edges, h_edge_set);
            mapping[next] = None;
            used[candidate] = false;
        }
    }

    let mut best = usize::MAX;
    let mut mapping = vec![None; g_nodes.len()];
    let mut used = vec![false; h_nodes.len()];
    search(
        0,
        &mut mapping,
        &mut used,
        &mut best,
        g_nodes.len(),
        h_nodes.len(),
        &g_edges,
        &h_edge_set,
    );
    best
}

/// Isomorphism oracle: tries every node bijection.
pub fn brute_iso(g: &TemporalGraph, h: &TemporalGraph) -> bool {
    if g.nodes.len() != h.nodes.len() || g.edges.len() != h.edges.len() {
        return false;
    }
    let n = g.nodes.len();
    let g_nodes: Vec<&EventId> = g.nodes.iter().collect();
    let h_nodes: Vec<&EventId> = h.nodes.iter().collect();
    let g_edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .map(|(s, d)| {
            (
                g_nodes.iter().position(|x| *x == s).unwrap(),
                g_nodes.iter().position(|x| *x == d).unwrap(),
            )
        })
        .collect();
    let h_edge_set: HashSet<(usize, usize)> = h
        .edges
        .iter()
        .map(|(s, d)| {
            (
                h_nodes.iter().position(|x| *x == s).unwrap(),
                h_nodes.iter().position(|x| *x == d).unwrap(),
            )
        })
        .collect();
    permutations(n).iter().any(|perm| {
        g_edges
            .iter()
            .all(|&(u, v)| h_edge_set.contains(&(perm[u], perm[v])))
    })
}

/// Relabels a graph's nodes by a permutation of fresh names.
pub fn relabel(g: &TemporalGraph, perm: &[usize]) -> TemporalGraph {
    let nodes: Vec<&EventId> = g.nodes.iter().collect();
    let renamed: Vec<EventId> = perm.iter().map(|&i| EventId::new(format!("r{i}"))).collect();
    let index = |id: &EventId| nodes.iter().position(|n| *n == id).unwrap();
    let edges: Vec<(EventId, EventId)> = g
        .edges
        .iter()
        .map(|(s, d)| (renamed[index(s)].clone(), renamed[index(d)].clone()))
        .collect();
    TemporalGraph::from_edges(renamed.iter().cloned(), &edges)
}

/// Shared on-disk corpora for the heavier suites: synthesized once per test
/// process into a directory that lives until exit.
pub struct Fixtures {
    pub proscript: std::path::PathBuf,
    pub wikihow: std::path::PathBuf,
    pub schema11: std::path::PathBuf,
    pub demo_bank: std::path::PathBuf,
    pub root: std::path::PathBuf,
}

pub fn fixtures() -> &'static Fixtures {
    static FIXTURES: OnceLock<Fixtures> = OnceLock::new();
    FIXTURES.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir").keep();
        let proscript = dir.join("proscript.jsonl");
        let wikihow = dir.join("wikihow.jsonl");
        tgg_core::synth::write_proscript(&proscript, 17).expect("synth proscript");
        tgg_core::synth::write_wikihow(&wikihow, 17).expect("synth wikihow");
        let repo = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .ancestors()
            .nth(2)
            .expect("repo root")
            .to_path_buf();
        Fixtures {
            proscript,
            wikihow,
            schema11: repo.join("data/schema11.jsonl"),
            demo_bank: repo.join("data/demo_bank.json"),
            root: dir,
        }
    })
}
