//! Concept inventory and the rule grammar that turns a generated graph into
//! its sentence.
//!
//! Clause: `[prep NP ,]* subject verb [to NP] [NP | that Clause]`.
//! Noun phrase: `(possessor 's | the) adjective* noun`, or a pronoun when the
//! node was mentioned before. A pronoun must resolve to the most recent
//! mention of its gender class, which keeps the mapping from graphs to
//! sentences one-to-one.

use thiserror::Error;

use crate::penman::AmrGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gender {
    Masc,
    Fem,
    Neut,
}

impl Gender {
    pub(crate) fn index(self) -> usize {
        self as usize
    }

    fn pronoun(self, case: Case) -> &'static str {
        match (self, case) {
            (Gender::Masc, Case::Subj) => "he",
            (Gender::Masc, Case::Obj) => "him",
            (Gender::Masc, Case::Poss) => "his",
            (Gender::Fem, Case::Subj) => "she",
            (Gender::Fem, Case::Obj | Case::Poss) => "her",
            (Gender::Neut, Case::Subj | Case::Obj) => "it",
            (Gender::Neut, Case::Poss) => "its",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Case {
    Subj,
    Obj,
    Poss,
}

/// Predicate frames and their third-person surface form.
pub const PREDICATES: [(&str, &str); 12] = [
    ("want-01", "wants"),
    ("see-01", "sees"),
    ("like-01", "likes"),
    ("help-01", "helps"),
    ("know-01", "knows"),
    ("find-01", "finds"),
    ("give-01", "gives"),
    ("tell-01", "tells"),
    ("believe-01", "believes"),
    ("visit-01", "visits"),
    ("hear-01", "hears"),
    ("build-01", "builds"),
];

pub const ENTITIES: [(&str, Gender); 20] = [
    ("boy", Gender::Masc),
    ("man", Gender::Masc),
    ("king", Gender::Masc),
    ("father", Gender::Masc),
    ("brother", Gender::Masc),
    ("girl", Gender::Fem),
    ("woman", Gender::Fem),
    ("queen", Gender::Fem),
    ("mother", Gender::Fem),
    ("sister", Gender::Fem),
    ("dog", Gender::Neut),
    ("cat", Gender::Neut),
    ("house", Gender::Neut),
    ("city", Gender::Neut),
    ("book", Gender::Neut),
    ("car", Gender::Neut),
    ("tree", Gender::Neut),
    ("river", Gender::Neut),
    ("school", Gender::Neut),
    ("garden", Gender::Neut),
];

pub const MODIFIERS: [&str; 8] = ["big", "small", "old", "new", "red", "happy", "quiet", "strange"];

/// Adjunct roles in surface order with their prepositions.
pub const ADJUNCTS: [(&str, &str); 7] = [
    (":location", "in"),
    (":time", "before"),
    (":beneficiary", "for"),
    (":instrument", "using"),
    (":accompanier", "with"),
    (":topic", "about"),
    (":source", "from"),
];

/// Every role the generator uses, in canonical child order.
pub const ROLES: [&str; 12] = [
    ":ARG0",
    ":ARG1",
    ":ARG2",
    ":location",
    ":time",
    ":beneficiary",
    ":instrument",
    ":accompanier",
    ":topic",
    ":source",
    ":mod",
    ":poss",
];

pub(crate) fn role_rank(role: &str) -> usize {
    ROLES.iter().position(|r| *r == role).unwrap_or(ROLES.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Pred,
    Ent(Gender),
    Mod,
}

pub fn kind_of(concept: &str) -> Option<Kind> {
    if PREDICATES.iter().any(|(c, _)| *c == concept) {
        Some(Kind::Pred)
    } else if let Some((_, g)) = ENTITIES.iter().find(|(c, _)| *c == concept) {
        Some(Kind::Ent(*g))
    } else if MODIFIERS.contains(&concept) {
        Some(Kind::Mod)
    } else {
        None
    }
}

fn verb(concept: &str) -> &'static str {
    PREDICATES.iter().find(|(c, _)| *c == concept).map(|(_, w)| *w).unwrap_or("does")
}

/// Subset of the concept inventory the generator draws from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    pub predicates: Vec<&'static str>,
    pub entities: Vec<&'static str>,
    pub modifiers: Vec<&'static str>,
    pub adjuncts: Vec<&'static str>,
}

impl Inventory {
    pub fn full() -> Self {
        Inventory {
            predicates: PREDICATES.iter().map(|p| p.0).collect(),
            entities: ENTITIES.iter().map(|e| e.0).collect(),
            modifiers: MODIFIERS.to_vec(),
            adjuncts: ADJUNCTS.iter().map(|a| a.0).collect(),
        }
    }

    /// Small inventory for exhaustive enumeration: the first few concepts of
    /// each kind, always including one entity of every gender.
    pub fn reduced(predicates: usize, modifiers: usize, adjuncts: usize) -> Self {
        Inventory {
            predicates: PREDICATES.iter().take(predicates).map(|p| p.0).collect(),
            entities: vec!["boy", "man", "girl", "dog"],
            modifiers: MODIFIERS.iter().take(modifiers).copied().collect(),
            adjuncts: ADJUNCTS.iter().take(adjuncts).map(|a| a.0).collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RealizeError {
    #[error("concept `{0}` is not in the inventory")]
    UnknownConcept(String),
    #[error("node `{0}` cannot fill this position")]
    WrongKind(String),
    #[error("role {role} not allowed on `{node}`")]
    BadRole { node: String, role: String },
    #[error("pronoun for `{0}` would be ambiguous")]
    Ambiguous(String),
    #[error("node `{0}` is part of a cycle")]
    Cycle(String),
    #[error("graph has nodes the sentence does not cover")]
    Uncovered,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Unseen,
    Open,
    Done,
}

struct Realizer<'a> {
    g: &'a AmrGraph,
    words: Vec<&'a str>,
    state: Vec<State>,
    last: [Option<usize>; 3],
    covered: usize,
}

impl<'a> Realizer<'a> {
    fn kind(&self, v: usize) -> Result<Kind, RealizeError> {
        let c = &self.g.node(v).concept;
        kind_of(c).ok_or_else(|| RealizeError::UnknownConcept(c.clone()))
    }

    fn children(&self, v: usize) -> Vec<(&'a str, usize)> {
        let mut out: Vec<(&str, usize)> = self
            .g
            .edges()
            .iter()
            .filter(|e| e.source == v)
            .map(|e| (e.role.as_str(), e.target))
            .collect();
        out.sort_by_key(|&(r, t)| (role_rank(r), self.g.node(t).concept.clone()));
        out
    }

    fn bad_role(&self, v: usize, role: &str) -> RealizeError {
        RealizeError::BadRole {
            node: self.g.node(v).var.clone(),
            role: role.to_string(),
        }
    }

    fn clause(&mut self, v: usize) -> Result<(), RealizeError> {
        if self.kind(v)? != Kind::Pred {
            return Err(RealizeError::WrongKind(self.g.node(v).var.clone()));
        }
        if self.state[v] != State::Unseen {
            return Err(RealizeError::Cycle(self.g.node(v).var.clone()));
        }
        self.state[v] = State::Open;
        self.covered += 1;
        let kids = self.children(v);
        let mut seen = Vec::new();
        for &(r, _) in &kids {
            if seen.contains(&r) || r == ":mod" || r == ":poss" || role_rank(r) == ROLES.len() {
                return Err(self.bad_role(v, r));
            }
            seen.push(r);
        }
        let get = |role: &str| kids.iter().find(|(r, _)| *r == role).map(|&(_, t)| t);
        for (role, prep) in ADJUNCTS {
            if let Some(t) = get(role) {
                self.words.push(prep);
                self.np(t, Case::Obj)?;
                self.words.push(",");
            }
        }
        let subj = get(":ARG0").ok_or_else(|| self.bad_role(v, ":ARG0 missing"))?;
        self.np(subj, Case::Subj)?;
        self.words.push(verb(&self.g.node(v).concept));
        if let Some(t) = get(":ARG2") {
            self.words.push("to");
            self.np(t, Case::Obj)?;
        }
        if let Some(t) = get(":ARG1") {
            if self.kind(t)? == Kind::Pred {
                self.words.push("that");
                self.clause(t)?;
            } else {
                self.np(t, Case::Obj)?;
            }
        }
        self.state[v] = State::Done;
        Ok(())
    }

    fn np(&mut self, v: usize, case: Case) -> Result<(), RealizeError> {
        let Kind::Ent(gender) = self.kind(v)? else {
            return Err(RealizeError::WrongKind(self.g.node(v).var.clone()));
        };
        match self.state[v] {
            State::Done => {
                if self.last[gender.index()] != Some(v) {
                    return Err(RealizeError::Ambiguous(self.g.node(v).var.clone()));
                }
                self.words.push(gender.pronoun(case));
                return Ok(());
            }
            State::Open => return Err(RealizeError::Cycle(self.g.node(v).var.clone())),
            State::Unseen => {}
        }
        self.state[v] = State::Open;
        self.covered += 1;
        let kids = self.children(v);
        let mut poss = None;
        let mut adjectives = Vec::new();
        for &(r, t) in &kids {
            match r {
                ":poss" if poss.is_none() => poss = Some(t),
                ":mod" => {
                    if self.kind(t)? != Kind::Mod || self.state[t] != State::Unseen || !self.children(t).is_empty() {
                        return Err(RealizeError::WrongKind(self.g.node(t).var.clone()));
                    }
                    self.state[t] = State::Done;
                    self.covered += 1;
                    adjectives.push(self.g.node(t).concept.as_str());
                }
                _ => return Err(self.bad_role(v, r)),
            }
        }
        match poss {
            Some(p) => {
                let pronoun = self.state[p] == State::Done;
                self.np(p, Case::Poss)?;
                if !pronoun {
                    self.words.push("'s");
                }
            }
            None => self.words.push("the"),
        }
        adjectives.sort_unstable();
        if adjectives.windows(2).any(|w| w[0] == w[1]) {
            return Err(self.bad_role(v, ":mod repeated"));
        }
        self.words.extend(adjectives);
        self.words.push(self.g.node(v).concept.as_str());
        self.state[v] = State::Done;
        self.last[gender.index()] = Some(v);
        Ok(())
    }
}

/// Deterministic sentence for a graph in the generator's language.
pub fn realize(g: &AmrGraph) -> Result<String, RealizeError> {
    let mut r = Realizer {
        g,
        words: Vec::new(),
        state: vec![State::Unseen; g.node_count()],
        last: [None; 3],
        covered: 0,
    };
    r.clause(g.root())?;
    if r.covered != g.node_count() {
        return Err(RealizeError::Uncovered);
    }
    Ok(r.words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    fn say(text: &str) -> Result<String, RealizeError> {
        realize(&parse_penman(text).unwrap())
    }

    #[test]
    fn simple_clause() {
        assert_eq!(say("(s / see-01 :ARG0 (b / boy) :ARG1 (d / dog))").unwrap(), "the boy sees the dog");
    }

    #[test]
    fn reentrancy_becomes_pronoun() {
        let s = say("(b / believe-01 :ARG0 (b2 / boy) :ARG1 (s / see-01 :ARG0 (g / girl) :ARG1 b2))").unwrap();
        assert_eq!(s, "the boy believes that the girl sees him");
    }

    #[test]
    fn noun_phrase_order() {
        let s = say("(g / give-01 :ARG0 (w / woman :mod (r / red) :mod (b / big)) :ARG2 (c / cat :poss w) :ARG1 (h / house :poss (m / man)) :location (c2 / city))")
            .unwrap();
        assert_eq!(s, "in the city , the big red woman gives to her cat the man 's house");
    }

    #[test]
    fn ambiguous_pronoun_rejected() {
        // the recipient is mentioned before the man, so "him" is still the boy
        assert!(say("(s / see-01 :ARG0 (b / boy) :ARG1 (h / house :poss (m / man)) :ARG2 b)").is_ok());
        // here "him" would resolve to the man
        let err = say("(s / see-01 :ARG0 (b / boy) :ARG2 (m / man) :ARG1 b)").unwrap_err();
        assert_eq!(err, RealizeError::Ambiguous("b".into()));
    }

    #[test]
    fn unknown_and_uncovered() {
        assert!(matches!(say("(s / sing-01 :ARG0 (b / boy))"), Err(RealizeError::UnknownConcept(_))));
        assert_eq!(say("(b / boy)").unwrap_err(), RealizeError::WrongKind("b".into()));
    }
}
