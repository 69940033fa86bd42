//! Minimum-degree fill-reducing ordering on the explicit elimination graph.

use std::collections::BTreeSet;

use crate::sparse::CscMatrix;

/// Elimination order for a symmetric matrix given by either triangle (or
/// both). Returns `perm` with `perm[new] = old`. Ties go to the lowest
/// node index, so the result is deterministic.
pub fn min_degree(k: &CscMatrix) -> Vec<usize> {
    let n = k.ncols;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in k.triplets() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        perm.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    perm
}

/// `pinv[old] = new` for `perm[new] = old`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut pinv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        pinv[old] = new;
    }
    pinv
}
