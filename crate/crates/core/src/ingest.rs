//! CoNLL-U ingestion: parsed sentences, `form.UPOS` hierarchy edges, and the
//! classification vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::{read_to_string, write_atomic};
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Parent position, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl ParsedToken {
    pub fn key(&self) -> String {
        node_key(&self.form, &self.upos)
    }
}

/// A sentence together with its `# sent_id` comment, when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: Option<String>,
    pub tokens: Vec<ParsedToken>,
}

/// Canonical node key: lowercased form, uppercase UPOS, joined by `.`.
///
/// Whitespace inside a form is replaced with `_` so keys stay valid in the
/// whitespace-delimited file formats. Keys split at the last `.`.
pub fn node_key(form: &str, upos: &str) -> String {
    let form: String = form
        .to_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect();
    format!("{}.{}", form, upos.to_uppercase())
}

/// Split a key into `(form, UPOS)`.
pub fn split_key(key: &str) -> Option<(&str, &str)> {
    key.rsplit_once('.')
}

pub fn parse_conllu(text: &str) -> Result<Vec<Vec<ParsedToken>>> {
    Ok(parse_conllu_sentences(text)?
        .into_iter()
        .map(|s| s.tokens)
        .collect())
}

/// Like [`parse_conllu`] but keeps sentence ids for companion-file lookup.
pub fn parse_conllu_sentences(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut current = Sentence {
        id: None,
        tokens: Vec::new(),
    };
    let flush = |cur: &mut Sentence, out: &mut Vec<Sentence>| {
        if !cur.tokens.is_empty() {
            out.push(std::mem::replace(
                cur,
                Sentence {
                    id: None,
                    tokens: Vec::new(),
                },
            ));
        } else {
            cur.id = None;
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut current, &mut out);
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "sent_id" {
                    current.id = Some(v.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        // multiword ranges and empty nodes
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-integer token id {id:?}"),
        })?;
        if index == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "token id must be >= 1".into(),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-integer head {:?}", cols[6]),
        })?;
        if head == index {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token {index} is its own head"),
            });
        }
        current.tokens.push(ParsedToken {
            index,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    flush(&mut current, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DepEdge {
    pub parent: String,
    pub child: String,
}

/// One edge per non-root token, parent key to child key.
pub fn extract_edges(sentence: &[ParsedToken]) -> Result<Vec<DepEdge>> {
    let by_index: HashMap<usize, &ParsedToken> =
        sentence.iter().map(|t| (t.index, t)).collect();
    let mut edges = Vec::with_capacity(sentence.len().saturating_sub(1));
    for tok in sentence {
        if tok.head == 0 {
            continue;
        }
        let parent = by_index.get(&tok.head).ok_or_else(|| {
            Error::Structural(format!(
                "token {} ({:?}) points at missing head {}",
                tok.index, tok.form, tok.head
            ))
        })?;
        edges.push(DepEdge {
            parent: parent.key(),
            child: tok.key(),
        });
    }
    Ok(edges)
}

/// Remove `PUNCT` tokens, re-attaching any of their dependents to the
/// punctuation token's own head.
pub fn drop_punct(sentence: &[ParsedToken]) -> Vec<ParsedToken> {
    let by_index: HashMap<usize, &ParsedToken> =
        sentence.iter().map(|t| (t.index, t)).collect();
    let resolve = |mut head: usize| {
        let mut guard = 0;
        while let Some(t) = by_index.get(&head) {
            if t.upos != "PUNCT" || guard > sentence.len() {
                break;
            }
            head = t.head;
            guard += 1;
        }
        head
    };
    sentence
        .iter()
        .filter(|t| t.upos != "PUNCT")
        .map(|t| ParsedToken {
            head: resolve(t.head),
            ..t.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    pub drop_punct: bool,
    pub dedupe: bool,
}

/// The edge multiset DARE trains on, plus node bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchyGraph {
    pub edges: Vec<DepEdge>,
    pub node_keys: BTreeSet<String>,
    pub node_counts: BTreeMap<String, usize>,
}

impl HierarchyGraph {
    pub fn from_sentences<'a, I>(sentences: I, opts: GraphOptions) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vec<ParsedToken>>,
    {
        let mut g = HierarchyGraph::default();
        for sent in sentences {
            let owned;
            let sent: &[ParsedToken] = if opts.drop_punct {
                owned = drop_punct(sent);
                &owned
            } else {
                sent
            };
            for tok in sent {
                let key = tok.key();
                *g.node_counts.entry(key.clone()).or_insert(0) += 1;
                g.node_keys.insert(key);
            }
            g.edges.extend(extract_edges(sent)?);
        }
        if opts.dedupe {
            g.dedupe();
        }
        Ok(g)
    }

    pub fn from_edges(edges: Vec<DepEdge>) -> Self {
        let mut g = HierarchyGraph::default();
        for e in &edges {
            for k in [&e.parent, &e.child] {
                *g.node_counts.entry(k.clone()).or_insert(0) += 1;
                g.node_keys.insert(k.clone());
            }
        }
        g.edges = edges;
        g
    }

    /// Add a node with no edges (used for isolated keys).
    pub fn add_node(&mut self, key: &str) {
        self.node_keys.insert(key.to_string());
        self.node_counts.entry(key.to_string()).or_insert(0);
    }

    pub fn dedupe(&mut self) {
        let mut seen = BTreeSet::new();
        self.edges.retain(|e| seen.insert(e.clone()));
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            let _ = writeln!(s, "{}\t{}", e.parent, e.child);
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (p, c) = line.split_once('\t').ok_or_else(|| Error::Format {
                line: i + 1,
                message: "expected `parent<TAB>child`".into(),
            })?;
            if c.contains('\t') || p.is_empty() || c.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    message: "expected exactly two non-empty columns".into(),
                });
            }
            edges.push(DepEdge {
                parent: p.to_string(),
                child: c.to_string(),
            });
        }
        Ok(Self::from_edges(edges))
    }

    pub fn save_edge_list(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_edge_list().as_bytes())
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        Self::parse_edge_list(&read_to_string(path)?)
    }
}

/// Frequency-ordered key vocabulary with reserved PAD/UNK ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    keys: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    limit: usize,
}

impl Vocab {
    pub fn from_keys(keys: Vec<String>, limit: usize) -> Result<Self> {
        if keys.len() < 2 || keys[PAD_ID] != PAD || keys[UNK_ID] != UNK {
            return Err(Error::Format {
                line: 1,
                message: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        let mut v = Vocab {
            keys,
            index: HashMap::new(),
            limit,
        };
        v.reindex();
        if v.index.len() != v.keys.len() {
            return Err(Error::Format {
                line: 1,
                message: "duplicate vocabulary key".into(),
            });
        }
        Ok(v)
    }

    fn reindex(&mut self) {
        self.index = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn id(&self, key: &str) -> usize {
        self.index.get(key).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: usize) -> Option<&str> {
        self.keys.get(id).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Restore the lookup index after deserialisation.
    pub fn rebuild_index(&mut self) {
        self.reindex();
    }
}

/// Rank keys by descending count, ties broken lexicographically, and keep
/// the top `limit - 2` after PAD and UNK.
pub fn build_vocab<'a, I>(corpus: I, limit: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [ParsedToken]>,
{
    if limit < 3 {
        return Err(Error::Config(format!("vocab limit must be >= 3, got {limit}")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for sent in corpus {
        for t in sent {
            *counts.entry(t.key()).or_insert(0) += 1;
        }
    }
    Ok(vocab_from_counts(counts, limit))
}

pub(crate) fn vocab_from_counts(counts: HashMap<String, usize>, limit: usize) -> Vocab {
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(k, _)| k != PAD && k != UNK)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut keys = vec![PAD.to_string(), UNK.to_string()];
    keys.extend(
        ranked
            .into_iter()
            .take(limit.saturating_sub(2))
            .map(|(k, _)| k),
    );
    let mut v = Vocab {
        keys,
        index: HashMap::new(),
        limit,
    };
    v.reindex();
    v
}
