use std::collections::HashMap;

use super::{AmrGraph, PenmanError};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Symbol(String),
    Quoted(String),
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, PenmanError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((Tok::Open, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::Close, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'"' => {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(PenmanError::Syntax {
                        msg: "unterminated string".into(),
                        offset: start,
                    });
                }
                i += 1;
                out.push((Tok::Quoted(text[start..i].to_string()), start));
            }
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b' ' | b'\t' | b'\n' | b'\r' | b'(' | b')' | b'"')
                {
                    i += 1;
                }
                let word = &text[start..i];
                if word.starts_with(':') {
                    if word.len() == 1 {
                        return Err(PenmanError::Syntax {
                            msg: "empty role".into(),
                            offset: start,
                        });
                    }
                    out.push((Tok::Role(word.to_string()), start));
                } else if let Some(pos) = word.find('/') {
                    // "x/concept" without spaces
                    if pos > 0 {
                        out.push((Tok::Symbol(word[..pos].to_string()), start));
                    }
                    out.push((Tok::Slash, start + pos));
                    if pos + 1 < word.len() {
                        out.push((Tok::Symbol(word[pos + 1..].to_string()), start + pos + 1));
                    }
                } else {
                    out.push((Tok::Symbol(word.to_string()), start));
                }
            }
        }
    }
    Ok(out)
}

enum Value {
    Node(RawNode),
    Atom { text: String, quoted: bool, offset: usize },
}

struct RawNode {
    var: String,
    concept: String,
    var_offset: usize,
    branches: Vec<(String, Value)>,
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a (Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn syntax(&self, msg: &str) -> PenmanError {
        PenmanError::Syntax {
            msg: msg.to_string(),
            offset: self.peek().map_or(self.end, |t| t.1),
        }
    }

    fn node(&mut self) -> Result<RawNode, PenmanError> {
        let open = match self.peek() {
            Some((Tok::Open, off)) => *off,
            _ => return Err(self.syntax("expected `(`")),
        };
        self.pos += 1;
        let (var, var_offset) = match self.peek() {
            Some((Tok::Symbol(s), off)) => (s.clone(), *off),
            None => return Err(PenmanError::Unbalanced { offset: open }),
            _ => return Err(self.syntax("expected variable")),
        };
        self.pos += 1;
        match self.peek() {
            Some((Tok::Slash, _)) => self.pos += 1,
            None => return Err(PenmanError::Unbalanced { offset: open }),
            _ => return Err(self.syntax("expected `/`")),
        }
        let concept = match self.peek() {
            Some((Tok::Symbol(s), _)) | Some((Tok::Quoted(s), _)) => s.clone(),
            None => return Err(PenmanError::Unbalanced { offset: open }),
            _ => return Err(self.syntax("expected concept")),
        };
        self.pos += 1;
        let mut branches = Vec::new();
        loop {
            match self.peek() {
                Some((Tok::Close, _)) => {
                    self.pos += 1;
                    break;
                }
                Some((Tok::Role(role), _)) => {
                    let role = role.clone();
                    self.pos += 1;
                    let value = match self.peek() {
                        Some((Tok::Open, _)) => Value::Node(self.node()?),
                        Some((Tok::Symbol(s), off)) => {
                            self.pos += 1;
                            Value::Atom {
                                text: s.clone(),
                                quoted: false,
                                offset: *off,
                            }
                        }
                        Some((Tok::Quoted(s), off)) => {
                            self.pos += 1;
                            Value::Atom {
                                text: s.clone(),
                                quoted: true,
                                offset: *off,
                            }
                        }
                        None => return Err(PenmanError::Unbalanced { offset: open }),
                        _ => return Err(self.syntax("expected role value")),
                    };
                    branches.push((role, value));
                }
                None => return Err(PenmanError::Unbalanced { offset: open }),
                _ => return Err(self.syntax("expected role or `)`")),
            }
        }
        Ok(RawNode {
            var,
            concept,
            var_offset,
            branches,
        })
    }
}

/// Symbols shaped like AMR variables (`x`, `s2`); an undeclared one is an error
/// rather than a symbolic constant.
fn looks_like_variable(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

fn declare(node: &RawNode, seen: &mut HashMap<String, usize>) -> Result<(), PenmanError> {
    if seen.contains_key(&node.var) {
        return Err(PenmanError::Duplicate {
            var: node.var.clone(),
            offset: node.var_offset,
        });
    }
    seen.insert(node.var.clone(), node.var_offset);
    for (_, v) in &node.branches {
        if let Value::Node(child) = v {
            declare(child, seen)?;
        }
    }
    Ok(())
}

fn build(
    node: &RawNode,
    declared: &HashMap<String, usize>,
    g: &mut AmrGraph,
    pending: &mut Vec<(usize, String, usize)>,
) -> Result<usize, PenmanError> {
    let id = g
        .add_node(&node.var, &node.concept)
        .map_err(|_| PenmanError::Duplicate {
            var: node.var.clone(),
            offset: node.var_offset,
        })?;
    for (role, value) in &node.branches {
        match value {
            Value::Node(child) => {
                let slot = g.edges().len();
                g.add_edge(id, role, id);
                let cid = build(child, declared, g, pending)?;
                g.set_edge_target(slot, cid);
            }
            Value::Atom { text, quoted, offset } => {
                if !quoted && declared.contains_key(text) {
                    // target may be declared later in the text; resolve after the walk
                    let slot = g.edges().len();
                    g.add_edge(id, role, id);
                    pending.push((slot, text.clone(), *offset));
                } else if !quoted && looks_like_variable(text) {
                    return Err(PenmanError::Undeclared {
                        var: text.clone(),
                        offset: *offset,
                    });
                } else {
                    let c = g.add_constant(text);
                    g.add_edge(id, role, c);
                }
            }
        }
    }
    Ok(id)
}

/// Parses one PENMAN graph. Re-entrant references resolve to the declared node;
/// attribute values become constant nodes.
pub fn parse_penman(text: &str) -> Result<AmrGraph, PenmanError> {
    let toks = lex(text)?;
    let mut depth: i64 = 0;
    for (t, off) in &toks {
        match t {
            Tok::Open => depth += 1,
            Tok::Close => {
                depth -= 1;
                if depth < 0 {
                    return Err(PenmanError::Unbalanced { offset: *off });
                }
            }
            _ => {}
        }
    }
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
    };
    let raw = p.node()?;
    if let Some((_, off)) = p.peek() {
        return Err(PenmanError::Syntax {
            msg: "trailing input after graph".into(),
            offset: *off,
        });
    }
    let mut declared = HashMap::new();
    declare(&raw, &mut declared)?;

    let mut g = AmrGraph::empty();
    let mut pending = Vec::new();
    build(&raw, &declared, &mut g, &mut pending)?;
    let mut edges = g.edges().to_vec();
    for (slot, var, offset) in pending {
        let target = g
            .node_id(&var)
            .ok_or(PenmanError::Undeclared { var, offset })?;
        edges[slot].target = target;
    }
    Ok(g.with_edges(edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph() {
        let g = parse_penman("(a / alpha)").unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node(g.root()).var, "a");
    }

    #[test]
    fn reference_before_declaration_resolves() {
        let g = parse_penman("(a / and :op1 b :op2 (b / boy))").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.triples(), vec![("a", ":op1", "b"), ("a", ":op2", "b")]);
    }

    #[test]
    fn constants_and_strings() {
        let g = parse_penman(r#"(n / name :op1 "Obama" :polarity - :quant 8)"#).unwrap();
        assert_eq!(g.node_count(), 4);
        let concepts: Vec<_> = g.nodes().iter().map(|n| n.concept.as_str()).collect();
        assert_eq!(concepts, vec!["name", "\"Obama\"", "-", "8"]);
        assert!(g.nodes()[1..].iter().all(|n| n.constant));
    }

    #[test]
    fn compact_slash_is_accepted() {
        let g = parse_penman("(a/alpha :ARG0 (b/beta))").unwrap();
        assert_eq!(g.triples(), vec![("a", ":ARG0", "b")]);
    }

    #[test]
    fn error_offsets() {
        assert_eq!(
            parse_penman("(a / alpha :ARG0 (b / beta)"),
            Err(PenmanError::Unbalanced { offset: 0 })
        );
        assert_eq!(
            parse_penman("(a / alpha))"),
            Err(PenmanError::Unbalanced { offset: 11 })
        );
        assert_eq!(
            parse_penman("(a / alpha :ARG0 x)"),
            Err(PenmanError::Undeclared {
                var: "x".into(),
                offset: 17
            })
        );
        assert_eq!(
            parse_penman("(a / alpha :ARG0 (a / beta))"),
            Err(PenmanError::Duplicate {
                var: "a".into(),
                offset: 18
            })
        );
        assert!(matches!(
            parse_penman("(a / alpha) (b / beta)"),
            Err(PenmanError::Syntax { offset: 12, .. })
        ));
    }

    #[test]
    fn symbolic_constants_are_not_variables() {
        let g = parse_penman("(g / go-02 :mode imperative)").unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(g.node(1).constant);
    }
}
