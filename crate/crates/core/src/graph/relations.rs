use std::collections::BTreeSet;

use crate::penman::{invert_role, normalize_inverse_roles, AmrGraph};

use super::Variant;

/// Relation id of a default (source → target) edge in the structural table.
pub const DEFAULT: usize = 0;
/// Relation id of the reverse twin of a default edge.
pub const REVERSE: usize = 1;

const UNKNOWN: &str = "unknown";

/// Relation vocabulary of the token graph.
///
/// The structural table has only `default` and `reverse`. The typed table
/// (used when role tokens are dropped from the input) has a forward and reverse
/// id per training role, then a final `unknown` id that also covers links
/// that do not come from a role edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationTable {
    names: Vec<String>,
    typed: bool,
}

impl RelationTable {
    pub fn structural() -> Self {
        RelationTable {
            names: vec!["default".into(), "reverse".into()],
            typed: false,
        }
    }

    /// Typed table over the given (already normalized) role labels.
    pub fn typed<I, S>(roles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = roles.into_iter().map(|r| r.as_ref().to_string()).collect();
        let mut names = Vec::with_capacity(2 * set.len() + 1);
        for r in set {
            let inverse = invert_role(&r);
            names.push(r);
            names.push(inverse);
        }
        names.push(UNKNOWN.into());
        RelationTable { names, typed: true }
    }

    /// Table for a variant, collecting roles from training graphs.
    pub fn for_variant(variant: Variant, training: &[AmrGraph]) -> Self {
        match variant {
            Variant::NodesAndEdges => Self::structural(),
            Variant::NodesOnly => {
                let roles: BTreeSet<String> = training
                    .iter()
                    .flat_map(|g| normalize_inverse_roles(g).edges().iter().map(|e| e.role.clone()).collect::<Vec<_>>())
                    .collect();
                Self::typed(roles)
            }
        }
    }

    /// Rebuild from the names written by [`RelationTable::names`].
    pub fn from_names(names: &[String]) -> Self {
        let typed = !(names.len() == 2 && names[0] == "default" && names[1] == "reverse");
        RelationTable {
            names: names.to_vec(),
            typed,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn is_typed(&self) -> bool {
        self.typed
    }

    /// Id used for links that are not role edges.
    pub fn link(&self) -> usize {
        if self.typed {
            self.names.len() - 1
        } else {
            DEFAULT
        }
    }

    /// Whether edges of this relation point along the graph direction. Links
    /// typed `unknown` are symmetric and count as forward.
    pub fn is_forward(&self, id: usize) -> bool {
        id.is_multiple_of(2)
    }

    pub fn reverse_of(&self, id: usize) -> usize {
        if !self.typed {
            return 1 - id;
        }
        if id == self.names.len() - 1 {
            id
        } else {
            id ^ 1
        }
    }

    /// Forward id of a role; unseen roles map to `unknown`.
    pub fn role(&self, role: &str) -> usize {
        if !self.typed {
            return DEFAULT;
        }
        let last = self.names.len() - 1;
        self.names[..last]
            .iter()
            .step_by(2)
            .position(|n| n == role)
            .map_or(last, |i| 2 * i)
    }
}
