//! Matching on small general graphs (Edmonds' blossom algorithm).

use std::collections::VecDeque;

const NONE: usize = usize::MAX;

/// Maximum matching; returns `mate[v]` (`None` when unmatched).
pub fn maximum_matching(n: usize, edges: &[(usize, usize)]) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut b = Blossom::new(adj);
    // greedy seed
    for v in 0..n {
        if b.mate[v] == NONE {
            if let Some(&w) = b.adj[v].iter().find(|&&w| b.mate[w] == NONE) {
                b.mate[v] = w;
                b.mate[w] = v;
            }
        }
    }
    for v in 0..n {
        if b.mate[v] == NONE {
            let mut u = b.find_path(v);
            while u != NONE {
                let pv = b.parent[u];
                let ppv = b.mate[pv];
                b.mate[u] = pv;
                b.mate[pv] = u;
                u = ppv;
            }
        }
    }
    b.mate.into_iter().map(|m| (m != NONE).then_some(m)).collect()
}

/// Whether some matching covers every vertex with `required[v]`; the other
/// vertices may be left unmatched.
///
/// Each optional vertex gets a private dummy partner, the dummies form a
/// clique (plus one parity dummy when the required count is odd), and the
/// question becomes perfect-matching existence.
pub fn covers_required(required: &[bool], edges: &[(usize, usize)]) -> bool {
    let n = required.len();
    let n_req = required.iter().filter(|&&r| r).count();
    if n_req == 0 {
        return true;
    }
    let optional: Vec<usize> = (0..n).filter(|&v| !required[v]).collect();
    if optional.is_empty() {
        if n % 2 == 1 {
            return false;
        }
        return is_perfect(n, edges);
    }
    let mut all = edges.to_vec();
    let first_dummy = n;
    for (k, &v) in optional.iter().enumerate() {
        all.push((v, first_dummy + k));
    }
    let mut total = n + optional.len();
    for a in 0..optional.len() {
        for b in a + 1..optional.len() {
            all.push((first_dummy + a, first_dummy + b));
        }
    }
    if n_req % 2 == 1 {
        let parity = total;
        total += 1;
        for k in 0..optional.len() {
            all.push((first_dummy + k, parity));
        }
    }
    is_perfect(total, &all)
}

fn is_perfect(n: usize, edges: &[(usize, usize)]) -> bool {
    n.is_multiple_of(2) && maximum_matching(n, edges).iter().all(Option::is_some)
}

struct Blossom {
    adj: Vec<Vec<usize>>,
    mate: Vec<usize>,
    parent: Vec<usize>,
    base: Vec<usize>,
    used: Vec<bool>,
    in_blossom: Vec<bool>,
}

impl Blossom {
    fn new(adj: Vec<Vec<usize>>) -> Self {
        let n = adj.len();
        Self {
            adj,
            mate: vec![NONE; n],
            parent: vec![NONE; n],
            base: (0..n).collect(),
            used: vec![false; n],
            in_blossom: vec![false; n],
        }
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        let mut seen = vec![false; self.adj.len()];
        loop {
            a = self.base[a];
            seen[a] = true;
            if self.mate[a] == NONE {
                break;
            }
            a = self.parent[self.mate[a]];
        }
        loop {
            b = self.base[b];
            if seen[b] {
                return b;
            }
            b = self.parent[self.mate[b]];
        }
    }

    fn mark_path(&mut self, mut v: usize, root: usize, mut child: usize) {
        while self.base[v] != root {
            self.in_blossom[self.base[v]] = true;
            self.in_blossom[self.base[self.mate[v]]] = true;
            self.parent[v] = child;
            child = self.mate[v];
            v = self.parent[self.mate[v]];
        }
    }

    fn find_path(&mut self, root: usize) -> usize {
        let n = self.adj.len();
        self.used.iter_mut().for_each(|u| *u = false);
        self.parent.iter_mut().for_each(|p| *p = NONE);
        for (i, b) in self.base.iter_mut().enumerate() {
            *b = i;
        }
        self.used[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for k in 0..self.adj[v].len() {
                let to = self.adj[v][k];
                if self.base[v] == self.base[to] || self.mate[v] == to {
                    continue;
                }
                if to == root || (self.mate[to] != NONE && self.parent[self.mate[to]] != NONE) {
                    let cur = self.lca(v, to);
                    self.in_blossom.iter_mut().for_each(|b| *b = false);
                    self.mark_path(v, cur, to);
                    self.mark_path(to, cur, v);
                    for i in 0..n {
                        if self.in_blossom[self.base[i]] {
                            self.base[i] = cur;
                            if !self.used[i] {
                                self.used[i] = true;
                                queue.push_back(i);
                            }
                        }
                    }
                } else if self.parent[to] == NONE {
                    self.parent[to] = v;
                    if self.mate[to] == NONE {
                        return to;
                    }
                    let next = self.mate[to];
                    self.used[next] = true;
                    queue.push_back(next);
                }
            }
        }
        NONE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    }

    fn matched(m: &[Option<usize>]) -> usize {
        m.iter().filter(|x| x.is_some()).count()
    }

    #[test]
    fn cycles() {
        assert_eq!(matched(&maximum_matching(6, &cycle(6))), 6);
        assert_eq!(matched(&maximum_matching(5, &cycle(5))), 4);
        assert!(!covers_required(&[true; 5], &cycle(5)));
        assert!(covers_required(&[true; 6], &cycle(6)));
    }

    #[test]
    fn blossom_needed() {
        // odd cycle 0-1-2 with pendants 3 and 4-5: matched as 2-3, 0-1, 4-5
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (0, 4), (4, 5)];
        assert!(covers_required(&[true; 6], &edges));
        // two triangles joined by one edge
        let edges = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)];
        assert!(covers_required(&[true; 6], &edges));
    }

    #[test]
    fn optional_vertices() {
        // 5-cycle where one vertex may stay unmatched
        let mut req = [true; 5];
        req[4] = false;
        assert!(covers_required(&req, &cycle(5)));
        // path a-b-c with only b required
        assert!(covers_required(&[false, true, false], &[(0, 1), (1, 2)]));
        // isolated required vertex
        assert!(!covers_required(&[true, false], &[]));
        // no required vertices
        assert!(covers_required(&[false, false, false], &[]));
    }
}
