//! Byte-level pair-merge subword vocabulary.
//!
//! Text is cut into chunks at every whitespace run that follows a
//! non-whitespace character, so `"a b"` becomes `"a"`, `" b"`. Each chunk
//! starts as raw bytes and merges never cross chunk boundaries. Every byte has
//! its own token, so any string is encodable and `decode(encode(s)) == s`.
//!
//! Ids: specials first (`<pad>`, `</s>`, `<mask>`), then the 256 byte tokens,
//! then one token per merge in merge order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const MASK: usize = 2;
pub const SPECIALS: [&str; 3] = ["<pad>", "</s>", "<mask>"];
const BYTE_BASE: usize = SPECIALS.len();
const HEADER: &str = "structadapt-vocab 1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target size {0} is below the byte alphabet plus specials ({1})")]
    TargetTooSmall(usize, usize),
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error("vocabulary file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(usize, usize)>,
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(usize, usize), usize>,
}

/// Splits text into merge domains; concatenating the chunks gives the input.
pub fn chunks(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        if bytes[i].is_ascii_whitespace() && !bytes[i - 1].is_ascii_whitespace() {
            out.push(&text[start..i]);
            start = i;
        }
    }
    if start < bytes.len() {
        out.push(&text[start..]);
    }
    out
}

fn byte_ids(chunk: &str) -> Vec<usize> {
    chunk.bytes().map(|b| BYTE_BASE + b as usize).collect()
}

fn apply_merge(word: &mut Vec<usize>, pair: (usize, usize), new_id: usize) {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

impl Vocabulary {
    /// Vocabulary with specials and bytes only.
    pub fn bytes_only() -> Self {
        let mut tokens: Vec<Vec<u8>> = SPECIALS.iter().map(|s| s.as_bytes().to_vec()).collect();
        tokens.extend((0..=255u8).map(|b| vec![b]));
        Vocabulary {
            merges: Vec::new(),
            tokens,
            ranks: HashMap::new(),
        }
    }

    /// Greedy most-frequent-pair merging until `target_size` tokens exist or
    /// no pair remains. Ties go to the lexicographically smallest pair of
    /// token byte strings.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self, TokenizerError> {
        let floor = BYTE_BASE + 256;
        if target_size < floor {
            return Err(TokenizerError::TargetTooSmall(target_size, floor));
        }
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for c in chunks(line.as_ref()) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<usize>, usize)> = counts
            .into_iter()
            .map(|(w, n)| (byte_ids(w), n))
            .collect();
        words.sort();

        let mut vocab = Self::bytes_only();
        while vocab.tokens.len() < target_size {
            let mut pairs: HashMap<(usize, usize), usize> = HashMap::new();
            for (w, n) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += n;
                }
            }
            let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&vocab.tokens[pa.0], &vocab.tokens[pa.1]);
                    let kb = (&vocab.tokens[pb.0], &vocab.tokens[pb.1]);
                    kb.cmp(&ka)
                })
            });
            let Some((pair, _)) = best else { break };
            let new_id = vocab.push_merge(pair);
            for (w, _) in &mut words {
                apply_merge(w, pair, new_id);
            }
        }
        Ok(vocab)
    }

    fn push_merge(&mut self, pair: (usize, usize)) -> usize {
        let mut bytes = self.tokens[pair.0].clone();
        bytes.extend_from_slice(&self.tokens[pair.1]);
        let id = self.tokens.len();
        self.ranks.insert(pair, self.merges.len());
        self.merges.push(pair);
        self.tokens.push(bytes);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Merge rules as pairs of token byte strings, in application order.
    pub fn merges(&self) -> Vec<(&[u8], &[u8])> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a].as_slice(), self.tokens[b].as_slice()))
            .collect()
    }

    pub fn token_bytes(&self, id: usize) -> Option<&[u8]> {
        self.tokens.get(id).map(|t| t.as_slice())
    }

    pub fn is_special(id: usize) -> bool {
        id < BYTE_BASE
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<usize>) {
        let mut word = byte_ids(chunk);
        loop {
            let best = word
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            apply_merge(&mut word, pair, BYTE_BASE + 256 + rank);
        }
        out.extend_from_slice(&word);
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for c in chunks(text) {
            self.encode_chunk(c, &mut out);
        }
        out
    }

    /// Concatenated bytes of `ids`; special tokens contribute nothing.
    pub fn decode_bytes(&self, ids: &[usize]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id).ok_or(TokenizerError::UnknownId(id))?;
            if !Self::is_special(id) {
                out.extend_from_slice(tok);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Text form: header, specials, one merge per line (hex byte strings),
    /// then the token table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "specials {}", SPECIALS.join(" ")).unwrap();
        writeln!(s, "merges {}", self.merges.len()).unwrap();
        for (a, b) in self.merges() {
            writeln!(s, "{} {}", hex(a), hex(b)).unwrap();
        }
        writeln!(s, "tokens {}", self.tokens.len()).unwrap();
        for (i, t) in self.tokens.iter().enumerate() {
            if Self::is_special(i) {
                writeln!(s, "{i} {}", SPECIALS[i]).unwrap();
            } else {
                writeln!(s, "{i} {}", hex(t)).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let err = |line: usize, msg: &str| TokenizerError::Format {
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&HEADER) {
            return Err(err(1, "bad header"));
        }
        if lines.get(1) != Some(&format!("specials {}", SPECIALS.join(" ")).as_str()) {
            return Err(err(2, "unexpected specials"));
        }
        let n: usize = lines
            .get(2)
            .and_then(|l| l.strip_prefix("merges "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(3, "expected merge count"))?;
        let mut vocab = Self::bytes_only();
        let mut lookup: HashMap<Vec<u8>, usize> = vocab
            .tokens
            .iter()
            .enumerate()
            .skip(BYTE_BASE)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for k in 0..n {
            let line = lines.get(3 + k).ok_or_else(|| err(4 + k, "missing merge"))?;
            let mut parts = line.split(' ');
            let (a, b) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => (unhex(a), unhex(b)),
                _ => return Err(err(4 + k, "expected two fields")),
            };
            let (Some(a), Some(b)) = (a, b) else {
                return Err(err(4 + k, "bad hex"));
            };
            let (Some(&ia), Some(&ib)) = (lookup.get(&a), lookup.get(&b)) else {
                return Err(err(4 + k, "merge refers to unknown token"));
            };
            let id = vocab.push_merge((ia, ib));
            lookup.insert(vocab.tokens[id].clone(), id);
        }
        // the token table is redundant; verify it
        let table_start = 3 + n;
        let m: usize = lines
            .get(table_start)
            .and_then(|l| l.strip_prefix("tokens "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(table_start + 1, "expected token count"))?;
        if m != vocab.tokens.len() {
            return Err(err(table_start + 1, "token count disagrees with merges"));
        }
        for i in 0..m {
            let lineno = table_start + 2 + i;
            let line = lines.get(table_start + 1 + i).ok_or_else(|| err(lineno, "missing token"))?;
            let expected = if let Some(name) = SPECIALS.get(i) {
                format!("{i} {name}")
            } else {
                format!("{i} {}", hex(&vocab.tokens[i]))
            };
            if *line != expected {
                return Err(err(lineno, "token table disagrees with merges"));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent pair counter over whole words, overlapping pairs included.
    fn brute_force_top_pair(corpus: &[&str]) -> (u8, u8) {
        let mut counts: HashMap<(u8, u8), usize> = HashMap::new();
        for line in corpus {
            let b = line.as_bytes();
            for i in 0..b.len().saturating_sub(1) {
                if !b[i + 1].is_ascii_whitespace() {
                    *counts.entry((b[i], b[i + 1])).or_default() += 1;
                }
            }
        }
        let mut v: Vec<_> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v[0].0
    }

    #[test]
    fn first_merge_matches_brute_force() {
        let corpus = ["aaab", "aaab"];
        assert_eq!(brute_force_top_pair(&corpus), (b'a', b'a'));
        let v = Vocabulary::train(&corpus, 260).unwrap();
        assert_eq!(v.merges()[0], (&b"a"[..], &b"a"[..]));
        assert_eq!(v.encode("aaab").len(), 3);
    }

    #[test]
    fn byte_only_target() {
        let v = Vocabulary::train(&["hello world"], 259).unwrap();
        assert_eq!(v.len(), 259);
        assert!(v.merges().is_empty());
        assert_eq!(v.encode("hi").len(), 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Vocabulary::train(&["x"], 100),
            Err(TokenizerError::TargetTooSmall(..))
        ));
        let empty: [&str; 0] = [];
        assert!(matches!(
            Vocabulary::train(&empty, 300),
            Err(TokenizerError::EmptyCorpus)
        ));
        let v = Vocabulary::bytes_only();
        assert!(matches!(v.decode(&[10_000]), Err(TokenizerError::UnknownId(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["the boy sees the dog", "the dog sees the boy", "a big dog"];
        let a = Vocabulary::train(&corpus, 300).unwrap();
        let b = Vocabulary::train(&corpus, 300).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_string() {
        let v = Vocabulary::bytes_only();
        assert!(v.encode("").is_empty());
        assert_eq!(v.decode(&[]).unwrap(), "");
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let corpus = ["subsidize-01 :ARG1 utility :poss she", "Her utilities are all subsidized."];
        let v = Vocabulary::train(&corpus, 320).unwrap();
        let text = v.to_text();
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn chunks_cover_input() {
        assert_eq!(chunks("a  b c"), vec!["a", "  b", " c"]);
        assert_eq!(chunks(" lead"), vec![" lead"]);
    }

    proptest! {
        #[test]
        fn round_trip_any_string(s in "\\PC{0,40}", extra in "[ a-z:]{0,30}") {
            let v = Vocabulary::train(&[extra.as_str(), "the the the cat", "s: ARG0 ARG1"], 300).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
        }
    }
}
