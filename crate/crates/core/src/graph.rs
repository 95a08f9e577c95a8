//! Support-graph helpers shared by the HMM and MSP layers.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

/// Strongly connected components of a directed graph on `0..n`, each sorted,
/// listed in order of their smallest member.
pub fn strongly_connected(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut g = DiGraph::<(), ()>::with_capacity(n, edges.len());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for &(a, b) in edges {
        g.add_edge(nodes[a], nodes[b], ());
    }
    let mut comps: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    comps
}

/// Components with no edge leaving them. A dead-end node with no out-edges
/// at all also counts, so validation can flag it.
pub fn closed_classes(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let comps = strongly_connected(n, edges);
    let mut comp_of = vec![0; n];
    for (ci, c) in comps.iter().enumerate() {
        for &s in c {
            comp_of[s] = ci;
        }
    }
    let mut leaves = vec![false; comps.len()];
    for &(a, b) in edges {
        if comp_of[a] != comp_of[b] {
            leaves[comp_of[a]] = true;
        }
    }
    comps
        .into_iter()
        .enumerate()
        .filter(|(ci, _)| !leaves[*ci])
        .map(|(_, c)| c)
        .collect()
}

/// Period of a strongly connected class: gcd of all cycle lengths, found
/// from BFS levels as gcd over internal edges of `level[a] + 1 - level[b]`.
pub fn period(class: &[usize], edges: &[(usize, usize)]) -> usize {
    let n = class.iter().copied().max().map_or(0, |m| m + 1);
    let mut member = vec![false; n];
    for &s in class {
        member[s] = true;
    }
    let inside = |a: usize, b: usize| a < n && b < n && member[a] && member[b];
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if inside(a, b) {
            adj[a].push(b);
        }
    }
    let mut level = vec![usize::MAX; n];
    let Some(&root) = class.first() else { return 0 };
    level[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if level[b] == usize::MAX {
                level[b] = level[a] + 1;
                queue.push_back(b);
            }
        }
    }
    let mut g = 0usize;
    for &(a, b) in edges {
        if inside(a, b) {
            let d = (level[a] + 1).abs_diff(level[b]);
            g = gcd(g, d);
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
