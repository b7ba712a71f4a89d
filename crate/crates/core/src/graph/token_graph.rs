use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tokenizer::{Vocabulary, EOS};

use super::{GraphReprError, Linearization, RelationTable, UnlabeledGraph, Variant};

/// Subword positions of a linearization; the sequence ends with `</s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenization {
    pub ids: Vec<usize>,
    /// Positions covered by each symbol.
    pub spans: Vec<Range<usize>>,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encodes symbols separated by single spaces, as if the joined text were
/// tokenized, and remembers which positions belong to which symbol.
pub fn tokenize_symbols<S: AsRef<str>>(vocab: &Vocabulary, symbols: &[S]) -> Tokenization {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(symbols.len());
    for (i, s) in symbols.iter().enumerate() {
        let start = ids.len();
        if i == 0 {
            ids.extend(vocab.encode(s.as_ref()));
        } else {
            ids.extend(vocab.encode(&format!(" {}", s.as_ref())));
        }
        spans.push(start..ids.len());
    }
    ids.push(EOS);
    Tokenization { ids, spans }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rep {
    /// Every token of the source to every token of the target.
    Rep1,
    /// Last source token to first target token, plus intra-node chains.
    Rep2,
    /// First source token to first target token, plus intra-node chains.
    Rep3,
    /// All graph positions connected.
    Complete,
}

impl FromStr for Rep {
    type Err = GraphReprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rep1" => Ok(Rep::Rep1),
            "rep2" => Ok(Rep::Rep2),
            "rep3" => Ok(Rep::Rep3),
            "complete" => Ok(Rep::Complete),
            _ => Err(GraphReprError::Unknown(format!("subword representation `{s}`"))),
        }
    }
}

impl std::fmt::Display for Rep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rep::Rep1 => "rep1",
            Rep::Rep2 => "rep2",
            Rep::Rep3 => "rep3",
            Rep::Complete => "complete",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenEdge {
    pub src: usize,
    pub tgt: usize,
    pub relation: usize,
}

/// Adjacency over sequence positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGraph {
    pub seq_len: usize,
    /// Sorted by `(src, tgt, relation)`, no duplicates.
    pub edges: Vec<TokenEdge>,
    /// Unlabeled-graph node behind each position; `None` for specials.
    pub position_origin: Vec<Option<usize>>,
}

struct Builder<'a> {
    rep: Rep,
    relations: &'a RelationTable,
    edges: BTreeSet<TokenEdge>,
}

impl Builder<'_> {
    fn add(&mut self, src: usize, tgt: usize, relation: usize) {
        self.edges.insert(TokenEdge { src, tgt, relation });
        self.edges.insert(TokenEdge {
            src: tgt,
            tgt: src,
            relation: self.relations.reverse_of(relation),
        });
    }

    fn connect(&mut self, a: &Range<usize>, b: &Range<usize>, relation: usize) {
        match self.rep {
            Rep::Rep1 => {
                for p in a.clone() {
                    for q in b.clone() {
                        self.add(p, q, relation);
                    }
                }
            }
            Rep::Rep2 => self.add(a.end - 1, b.start, relation),
            Rep::Rep3 | Rep::Complete => self.add(a.start, b.start, relation),
        }
    }
}

/// Builds the token graph of one linearized example.
///
/// Positions of all mentions of a node are linked to each other. With typed
/// relations (role tokens dropped from the input) each role edge becomes a
/// direct link between its endpoint mentions.
pub fn build_token_graph(
    u: &UnlabeledGraph,
    lin: &Linearization,
    tok: &Tokenization,
    rep: Rep,
    relations: &RelationTable,
) -> Result<TokenGraph, GraphReprError> {
    if lin.symbols.len() != tok.spans.len() {
        return Err(GraphReprError::SpanCount {
            symbols: lin.symbols.len(),
            spans: tok.spans.len(),
        });
    }
    if let Some(i) = tok.spans.iter().position(|s| s.is_empty()) {
        return Err(GraphReprError::EmptySymbol(i));
    }
    let seq_len = tok.len();
    let mut position_origin = vec![None; seq_len];
    let mut mentions: BTreeMap<usize, Vec<Range<usize>>> = BTreeMap::new();
    for (span, origin) in tok.spans.iter().zip(&lin.origin) {
        if let Some(o) = *origin {
            for p in span.clone() {
                position_origin[p] = Some(o);
            }
            mentions.entry(o).or_default().push(span.clone());
        }
    }

    let link = relations.link();
    let mut b = Builder {
        rep,
        relations,
        edges: BTreeSet::new(),
    };

    if rep == Rep::Complete {
        let graph_positions: Vec<usize> = (0..seq_len).filter(|&p| position_origin[p].is_some()).collect();
        for &p in &graph_positions {
            for &q in &graph_positions {
                if p != q {
                    b.add(p, q, link);
                }
            }
        }
    } else {
        let empty = Vec::new();
        let spans_of = |n: usize| mentions.get(&n).unwrap_or(&empty);
        let structure: Vec<(usize, usize, usize)> = match lin.variant {
            Variant::NodesAndEdges => u.edges.iter().map(|&(s, t)| (s, t, link)).collect(),
            Variant::NodesOnly => {
                // collapse each role node back into a direct typed edge
                let mut src = vec![None; u.nodes.len()];
                let mut tgt = vec![None; u.nodes.len()];
                for &(s, t) in &u.edges {
                    if u.is_role(t) {
                        src[t] = Some(s);
                    } else {
                        tgt[s] = Some(t);
                    }
                }
                (u.concept_count..u.nodes.len())
                    .filter_map(|r| Some((src[r]?, tgt[r]?, relations.role(&u.nodes[r].label))))
                    .collect()
            }
        };
        for (s, t, rel) in structure {
            for a in spans_of(s) {
                for c in spans_of(t) {
                    b.connect(a, c, rel);
                }
            }
        }
        for spans in mentions.values() {
            for (i, a) in spans.iter().enumerate() {
                for (j, c) in spans.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    if rep == Rep::Rep1 {
                        b.connect(a, c, link);
                    } else {
                        b.add(a.start, c.start, link);
                    }
                }
            }
            if rep != Rep::Rep1 {
                for a in spans {
                    for p in a.start..a.end - 1 {
                        b.add(p, p + 1, link);
                    }
                }
            }
        }
    }

    Ok(TokenGraph {
        seq_len,
        edges: b.edges.into_iter().collect(),
        position_origin,
    })
}

impl TokenGraph {
    /// `seq_len N` header, then one `src tgt relation` line per edge.
    pub fn to_text(&self) -> String {
        let mut out = format!("seq_len {}\n", self.seq_len);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.src, e.tgt, e.relation);
        }
        out
    }

    /// Parses the edge-list format; returns the sequence length and edges.
    pub fn parse_text(text: &str) -> Result<(usize, Vec<TokenEdge>), GraphReprError> {
        let err = |line: usize, msg: &str| GraphReprError::Format {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let seq_len = header
            .strip_prefix("seq_len ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| err(1, "expected `seq_len N`"))?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|f| f.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| err(i + 1, "expected integers"))?;
            if nums.len() != 3 {
                return Err(err(i + 1, "expected `src tgt relation`"));
            }
            if nums[0] >= seq_len || nums[1] >= seq_len {
                return Err(err(i + 1, "position out of range"));
            }
            edges.push(TokenEdge {
                src: nums[0],
                tgt: nums[1],
                relation: nums[2],
            });
        }
        Ok((seq_len, edges))
    }

    pub fn count_relation(&self, relation: usize) -> usize {
        self.edges.iter().filter(|e| e.relation == relation).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{linearize, to_unlabeled, LinMode, DEFAULT, REVERSE};
    use crate::penman::parse_penman;

    /// Hand-made tokenization with a fixed number of positions per symbol.
    fn fake_tok(widths: &[usize]) -> Tokenization {
        let mut spans = Vec::new();
        let mut p = 0;
        for &w in widths {
            spans.push(p..p + w);
            p += w;
        }
        Tokenization {
            ids: vec![3; p + 1],
            spans,
        }
    }

    fn op1() -> (UnlabeledGraph, Linearization) {
        let g = parse_penman("(s / since :op1 (d / date-entity))").unwrap();
        (to_unlabeled(&g), linearize(&g, LinMode::Canon, Variant::NodesAndEdges, 0))
    }

    fn defaults(tg: &TokenGraph) -> Vec<(usize, usize)> {
        tg.edges
            .iter()
            .filter(|e| e.relation == DEFAULT)
            .map(|e| (e.src, e.tgt))
            .collect()
    }

    #[test]
    fn product_rule_rep1() {
        // u1 has 2 tokens, the role 1 token, v1 3 tokens; count u1 -> role only
        let (u, lin) = op1();
        let tg = build_token_graph(&u, &lin, &fake_tok(&[2, 1, 3]), Rep::Rep1, &RelationTable::structural()).unwrap();
        assert_eq!(tg.count_relation(DEFAULT), 2 + 3);
        assert_eq!(tg.count_relation(REVERSE), 5);
    }

    #[test]
    fn op1_subword_variants() {
        // "since" = [0,1], ":op1" = [2,3], "date-entity" = [4,5,6]
        let (u, lin) = op1();
        let tok = fake_tok(&[2, 2, 3]);
        let rel = RelationTable::structural();

        let r1 = build_token_graph(&u, &lin, &tok, Rep::Rep1, &rel).unwrap();
        let mut want = Vec::new();
        for p in 0..2 {
            for q in 2..4 {
                want.push((p, q));
            }
        }
        for p in 2..4 {
            for q in 4..7 {
                want.push((p, q));
            }
        }
        want.sort();
        assert_eq!(defaults(&r1), want);

        let r2 = build_token_graph(&u, &lin, &tok, Rep::Rep2, &rel).unwrap();
        assert_eq!(defaults(&r2), vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]);

        let r3 = build_token_graph(&u, &lin, &tok, Rep::Rep3, &rel).unwrap();
        assert_eq!(defaults(&r3), vec![(0, 1), (0, 2), (2, 3), (2, 4), (4, 5), (5, 6)]);

        for tg in [&r1, &r2, &r3] {
            assert_eq!(tg.count_relation(DEFAULT), tg.count_relation(REVERSE));
            assert_eq!(tg.position_origin[7], None);
            assert!(tg.edges.iter().all(|e| e.src != 7 && e.tgt != 7));
        }
    }

    #[test]
    fn complete_counts() {
        let (u, lin) = op1();
        let tg = build_token_graph(&u, &lin, &fake_tok(&[2, 2, 3]), Rep::Complete, &RelationTable::structural()).unwrap();
        assert_eq!(tg.count_relation(DEFAULT), 7 * 6);
    }

    #[test]
    fn empty_symbol_is_rejected() {
        let (u, lin) = op1();
        let err = build_token_graph(&u, &lin, &fake_tok(&[1, 0, 1]), Rep::Rep1, &RelationTable::structural());
        assert_eq!(err.unwrap_err(), GraphReprError::EmptySymbol(1));
    }

    #[test]
    fn nodes_only_typed_edges() {
        let g = parse_penman("(s / since :op1 (d / date-entity))").unwrap();
        let u = to_unlabeled(&g);
        let lin = linearize(&g, LinMode::Canon, Variant::NodesOnly, 0);
        let rel = RelationTable::for_variant(Variant::NodesOnly, &[g]);
        let tg = build_token_graph(&u, &lin, &fake_tok(&[1, 2]), Rep::Rep1, &rel).unwrap();
        let op = rel.role(":op1");
        let rev = rel.reverse_of(op);
        let got: Vec<_> = tg.edges.iter().map(|e| (e.src, e.tgt, e.relation)).collect();
        assert_eq!(got, vec![(0, 1, op), (0, 2, op), (1, 0, rev), (2, 0, rev)]);
    }

    #[test]
    fn mentions_are_linked() {
        let g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))").unwrap();
        let u = to_unlabeled(&g);
        let lin = linearize(&g, LinMode::Canon, Variant::NodesAndEdges, 0);
        let tok = fake_tok(&[1; 7]);
        let tg = build_token_graph(&u, &lin, &tok, Rep::Rep1, &RelationTable::structural()).unwrap();
        // "boy" at positions 2 and 6
        assert!(tg.edges.contains(&TokenEdge { src: 2, tgt: 6, relation: DEFAULT }));
        assert!(tg.edges.contains(&TokenEdge { src: 6, tgt: 2, relation: DEFAULT }));
        // both :ARG0 role nodes reach both mentions of boy
        assert!(tg.edges.contains(&TokenEdge { src: 1, tgt: 6, relation: DEFAULT }));
        assert!(tg.edges.contains(&TokenEdge { src: 5, tgt: 2, relation: DEFAULT }));
    }

    #[test]
    fn text_round_trip() {
        let (u, lin) = op1();
        let tg = build_token_graph(&u, &lin, &fake_tok(&[2, 2, 3]), Rep::Rep2, &RelationTable::structural()).unwrap();
        let text = tg.to_text();
        assert!(text.starts_with("seq_len 8\n0 1 0\n"));
        let (n, edges) = TokenGraph::parse_text(&text).unwrap();
        assert_eq!((n, edges), (tg.seq_len, tg.edges.clone()));
        assert!(TokenGraph::parse_text("seq_len 2\n0 5 0\n").is_err());
        assert!(TokenGraph::parse_text("edges 2\n").is_err());
    }

    #[test]
    fn real_tokenizer_spans() {
        let vocab = Vocabulary::bytes_only();
        let tok = tokenize_symbols(&vocab, &["ab", ":x"]);
        assert_eq!(tok.spans, vec![0..2, 2..5]);
        assert_eq!(*tok.ids.last().unwrap(), EOS);
    }
}
