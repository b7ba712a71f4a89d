use super::{AmrEdge, AmrGraph};

/// `:r` ↔ `:r-of`.
pub fn invert_role(role: &str) -> String {
    match role.strip_suffix("-of") {
        Some(base) => base.to_string(),
        None => format!("{role}-of"),
    }
}

/// Rewrites every `-of` edge as the reversed edge with the suffix removed.
pub fn normalize_inverse_roles(g: &AmrGraph) -> AmrGraph {
    normalize_with_exemptions(g, &[])
}

/// As [`normalize_inverse_roles`], leaving roles listed in `exempt` (for
/// example `:consist-of`) untouched. Each stacked `-of` flips direction once.
pub fn normalize_with_exemptions(g: &AmrGraph, exempt: &[&str]) -> AmrGraph {
    let edges = g
        .edges()
        .iter()
        .map(|e| {
            if exempt.contains(&e.role.as_str()) {
                return e.clone();
            }
            let mut base = e.role.as_str();
            let mut flips = 0;
            while let Some(rest) = base.strip_suffix("-of") {
                if rest.len() <= 1 {
                    break;
                }
                base = rest;
                flips += 1;
            }
            let (source, target) = if flips % 2 == 1 {
                (e.target, e.source)
            } else {
                (e.source, e.target)
            };
            AmrEdge {
                source,
                role: base.to_string(),
                target,
            }
        })
        .collect();
    g.with_edges(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::{is_isomorphic, parse_penman};

    #[test]
    fn inverse_edge_is_reversed() {
        let g = parse_penman("(u / utility :poss-of (s / she))").unwrap();
        let n = normalize_inverse_roles(&g);
        assert_eq!(n.triples(), vec![("s", ":poss", "u")]);
    }

    #[test]
    fn double_inverse_collapses() {
        let g = parse_penman("(u / utility :poss-of-of (s / she))").unwrap();
        let n = normalize_inverse_roles(&g);
        assert_eq!(n.triples(), vec![("u", ":poss", "s")]);
    }

    #[test]
    fn exempt_roles_are_kept() {
        let g = parse_penman("(t / team :consist-of (p / person))").unwrap();
        let n = normalize_with_exemptions(&g, &[":consist-of"]);
        assert_eq!(n.triples(), vec![("t", ":consist-of", "p")]);
    }

    #[test]
    fn random_linearization_normalizes_to_canon() {
        let canon = parse_penman("(s / subsidize-01 :ARG1 (u / utility :poss (s2 / she) :mod (a / all)))").unwrap();
        let random =
            parse_penman("(s2 / she :poss-of (u / utility :ARG1-of (s / subsidize-01) :mod (a / all)))").unwrap();
        assert!(is_isomorphic(&normalize_inverse_roles(&random), &normalize_inverse_roles(&canon)));
        let once = normalize_inverse_roles(&random);
        assert_eq!(normalize_inverse_roles(&once), once);
    }

    #[test]
    fn invert_role_round_trip() {
        assert_eq!(invert_role(":poss"), ":poss-of");
        assert_eq!(invert_role(":ARG0-of"), ":ARG0");
    }
}
