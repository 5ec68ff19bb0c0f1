//! Maximum bipartite matching (Hopcroft–Karp). Adjacency lists are scanned
//! in index order, so the matching returned is deterministic with ties
//! broken by lowest index.

use std::collections::VecDeque;

const UNMATCHED: usize = usize::MAX;

/// Maximum matching on a bipartite graph with `left` and `right` vertices
/// and adjacency `adj[i]` (right indices, assumed sorted ascending).
/// Returns `pair_left[i] = j` or `usize::MAX` when `i` is unmatched.
pub fn hopcroft_karp(left: usize, right: usize, adj: &[Vec<usize>]) -> Vec<usize> {
    debug_assert_eq!(adj.len(), left);
    let mut pair_left = vec![UNMATCHED; left];
    let mut pair_right = vec![UNMATCHED; right];
    let mut dist = vec![usize::MAX; left];

    loop {
        // BFS layering from free left vertices.
        let mut queue = VecDeque::new();
        for i in 0..left {
            if pair_left[i] == UNMATCHED {
                dist[i] = 0;
                queue.push_back(i);
            } else {
                dist[i] = usize::MAX;
            }
        }
        let mut found_augmenting = false;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                match pair_right[j] {
                    UNMATCHED => found_augmenting = true,
                    i2 => {
                        if dist[i2] == usize::MAX {
                            dist[i2] = dist[i] + 1;
                            queue.push_back(i2);
                        }
                    }
                }
            }
        }
        if !found_augmenting {
            break;
        }
        for i in 0..left {
            if pair_left[i] == UNMATCHED {
                dfs(i, adj, &mut pair_left, &mut pair_right, &mut dist);
            }
        }
    }
    pair_left
}

fn dfs(
    i: usize,
    adj: &[Vec<usize>],
    pair_left: &mut [usize],
    pair_right: &mut [usize],
    dist: &mut [usize],
) -> bool {
    for &j in &adj[i] {
        let ok = match pair_right[j] {
            UNMATCHED => true,
            i2 => dist[i2] == dist[i].wrapping_add(1) && dfs(i2, adj, pair_left, pair_right, dist),
        };
        if ok {
            pair_left[i] = j;
            pair_right[j] = i;
            return true;
        }
    }
    dist[i] = usize::MAX;
    false
}
