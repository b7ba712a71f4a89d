//! Labeled directed multigraph isomorphism: color refinement followed by
//! backtracking over same-colored candidates.

use std::collections::HashMap;

use super::AmrGraph;

type PairRoles = HashMap<(usize, usize), Vec<String>>;

fn pair_roles(g: &AmrGraph) -> PairRoles {
    let mut m: PairRoles = HashMap::new();
    for e in g.edges() {
        m.entry((e.source, e.target)).or_default().push(e.role.clone());
    }
    for v in m.values_mut() {
        v.sort();
    }
    m
}

fn intern(dict: &mut HashMap<String, usize>, key: String) -> usize {
    let next = dict.len();
    *dict.entry(key).or_insert(next)
}

fn refine(a: &AmrGraph, b: &AmrGraph) -> (Vec<usize>, Vec<usize>) {
    let mut dict = HashMap::new();
    let mut initial = |g: &AmrGraph| -> Vec<usize> {
        g.nodes()
            .iter()
            .map(|n| intern(&mut dict, format!("{}|{}", n.constant, n.concept)))
            .collect()
    };
    let mut ca = initial(a);
    let mut cb = initial(b);
    let rounds = a.node_count().max(1);
    for _ in 0..rounds {
        let step = |g: &AmrGraph, colors: &[usize]| -> Vec<String> {
            let mut sig: Vec<Vec<String>> = vec![Vec::new(); g.node_count()];
            for e in g.edges() {
                sig[e.source].push(format!(">{}:{}", e.role, colors[e.target]));
                sig[e.target].push(format!("<{}:{}", e.role, colors[e.source]));
            }
            sig.into_iter()
                .enumerate()
                .map(|(i, mut s)| {
                    s.sort();
                    format!("{}[{}]", colors[i], s.join(","))
                })
                .collect()
        };
        let sa = step(a, &ca);
        let sb = step(b, &cb);
        let mut round = HashMap::new();
        let na: Vec<usize> = sa.into_iter().map(|s| intern(&mut round, s)).collect();
        let nb: Vec<usize> = sb.into_iter().map(|s| intern(&mut round, s)).collect();
        let stable = distinct(&na) == distinct(&ca) && distinct(&nb) == distinct(&cb);
        ca = na;
        cb = nb;
        if stable {
            break;
        }
    }
    (ca, cb)
}

fn distinct(c: &[usize]) -> usize {
    let mut v = c.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

fn histogram(c: &[usize]) -> Vec<usize> {
    let mut v = c.to_vec();
    v.sort_unstable();
    v
}

fn iso(a: &AmrGraph, b: &AmrGraph, rooted: bool) -> bool {
    if a.node_count() != b.node_count() || a.edge_count() != b.edge_count() {
        return false;
    }
    let (ca, cb) = refine(a, b);
    if histogram(&ca) != histogram(&cb) {
        return false;
    }
    if rooted && ca[a.root()] != cb[b.root()] {
        return false;
    }
    let ra = pair_roles(a);
    let rb = pair_roles(b);
    let empty: Vec<String> = Vec::new();
    let roles = |m: &PairRoles, x: usize, y: usize| m.get(&(x, y)).unwrap_or(&empty).clone();

    // expansion order: BFS from the root keeps neighbors close together
    let adj = a.undirected_adjacency();
    let mut order = Vec::with_capacity(a.node_count());
    let mut seen = vec![false; a.node_count()];
    for s in std::iter::once(a.root()).chain(0..a.node_count()) {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = std::collections::VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            order.push(u);
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
    }

    let mut map = vec![usize::MAX; a.node_count()];
    let mut used = vec![false; b.node_count()];

    fn search(
        k: usize,
        order: &[usize],
        map: &mut [usize],
        used: &mut [bool],
        ok: &dyn Fn(usize, usize, &[usize]) -> bool,
        candidates: &dyn Fn(usize) -> Vec<usize>,
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let x = order[k];
        for y in candidates(x) {
            if used[y] || !ok(x, y, map) {
                continue;
            }
            map[x] = y;
            used[y] = true;
            if search(k + 1, order, map, used, ok, candidates) {
                return true;
            }
            map[x] = usize::MAX;
            used[y] = false;
        }
        false
    }

    let ok = |x: usize, y: usize, map: &[usize]| -> bool {
        if roles(&ra, x, x) != roles(&rb, y, y) {
            return false;
        }
        for (x2, &y2) in map.iter().enumerate() {
            if y2 == usize::MAX {
                continue;
            }
            if roles(&ra, x, x2) != roles(&rb, y, y2) || roles(&ra, x2, x) != roles(&rb, y2, y) {
                return false;
            }
        }
        true
    };
    let root_a = a.root();
    let root_b = b.root();
    let candidates = |x: usize| -> Vec<usize> {
        if rooted && x == root_a {
            return vec![root_b];
        }
        (0..cb.len()).filter(|&y| cb[y] == ca[x]).collect()
    };
    search(0, &order, &mut map, &mut used, &ok, &candidates)
}

/// Isomorphism ignoring which node is the root.
pub fn is_isomorphic(a: &AmrGraph, b: &AmrGraph) -> bool {
    iso(a, b, false)
}

/// Isomorphism that maps root to root.
pub fn is_isomorphic_rooted(a: &AmrGraph, b: &AmrGraph) -> bool {
    iso(a, b, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    #[test]
    fn variable_names_do_not_matter() {
        let a = parse_penman("(x / a :r (y / b) :s (z / b))").unwrap();
        let b = parse_penman("(p / a :s (q / b) :r (w / b))").unwrap();
        assert!(is_isomorphic_rooted(&a, &b));
    }

    #[test]
    fn role_swap_is_detected() {
        let a = parse_penman("(x / a :r (y / b) :s (z / c))").unwrap();
        let b = parse_penman("(x / a :s (y / b) :r (z / c))").unwrap();
        assert!(!is_isomorphic(&a, &b));
    }

    #[test]
    fn reentrancy_differs_from_copy() {
        let a = parse_penman("(w / want :ARG0 (b / boy) :ARG1 (g / go :ARG0 b))").unwrap();
        let b = parse_penman("(w / want :ARG0 (b / boy) :ARG1 (g / go :ARG0 (b2 / boy)))").unwrap();
        assert!(!is_isomorphic(&a, &b));
    }

    #[test]
    fn symmetric_structure_needs_backtracking() {
        // two identical branches whose leaves are cross-linked
        let a = parse_penman("(r / x :a (p / y :b (q / z)) :a (s / y :b (t / z :c q)))").unwrap();
        let b = parse_penman("(r / x :a (s / y :b (t / z)) :a (p / y :b (q / z :c t)))").unwrap();
        assert!(is_isomorphic_rooted(&a, &b));
    }
}
