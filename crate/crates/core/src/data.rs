//! Labeled corpora: loading, ratio resampling, stratified splits, and
//! encoding into padded embedding matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dare::EmbeddingTable;
use crate::ingest::{node_key, parse_conllu_sentences, Vocab, UNK_ID};
use crate::nn::Tensor;
use crate::util::{derive_seed, read_to_string, seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "non-claim")]
    NonClaim = 0,
    #[serde(rename = "claim")]
    Claim = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Claim
        } else {
            Label::NonClaim
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Claim => "claim",
            Label::NonClaim => "non-claim",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "claim" | "1" => Ok(Label::Claim),
            "non-claim" | "nonclaim" | "non_claim" | "0" => Ok(Label::NonClaim),
            other => Err(Error::Schema(format!("unknown label {other:?}"))),
        }
    }
}

/// A token with its POS tag when a parse is available.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub upos: Option<String>,
}

impl Token {
    pub fn key(&self) -> Option<String> {
        self.upos.as_ref().map(|p| node_key(&self.form, p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub examples: Vec<LabeledExample>,
}

impl LabeledCorpus {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        LabeledCorpus { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(claims, non-claims)`.
    pub fn counts(&self) -> (usize, usize) {
        let c = self
            .examples
            .iter()
            .filter(|e| e.label == Label::Claim)
            .count();
        (c, self.examples.len() - c)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.examples[i].label == label)
            .collect()
    }

    fn subset(&self, mut idx: Vec<usize>) -> LabeledCorpus {
        idx.sort_unstable();
        LabeledCorpus::new(idx.into_iter().map(|i| self.examples[i].clone()).collect())
    }
}

/// Column mapping for CSV/TSV inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub text_col: String,
    pub label_col: String,
    #[serde(default)]
    pub id_col: Option<String>,
    /// Raw label value to `claim` / `non-claim`.
    #[serde(default)]
    pub label_map: BTreeMap<String, Label>,
    /// Label for values missing from `label_map`; unmapped values are an
    /// error when unset.
    #[serde(default)]
    pub other_label: Option<Label>,
    /// Field delimiter; inferred from the extension when unset.
    #[serde(default)]
    pub delimiter: Option<char>,
}

impl DatasetSchema {
    pub fn new(text_col: &str, label_col: &str) -> Self {
        DatasetSchema {
            text_col: text_col.into(),
            label_col: label_col.into(),
            id_col: None,
            label_map: BTreeMap::new(),
            other_label: None,
            delimiter: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    fn map_label(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        if let Some(l) = self.label_map.get(raw) {
            return Some(*l);
        }
        if self.label_map.is_empty() {
            if let Ok(l) = raw.parse() {
                return Some(l);
            }
        }
        self.other_label
    }
}

/// Parse delimited text into a corpus. Tokens carry POS keys when
/// `parses` has a sentence whose `sent_id` equals the example id; otherwise
/// the text is split on whitespace with no POS.
pub fn load_dataset_str(
    text: &str,
    delimiter: u8,
    schema: &DatasetSchema,
    parses: Option<&HashMap<String, Vec<Token>>>,
) -> Result<LabeledCorpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let text_i = col(&schema.text_col)?;
    let label_i = col(&schema.label_col)?;
    let id_i = schema.id_col.as_deref().map(col).transpose()?;

    let mut examples = Vec::new();
    let mut offenders: BTreeMap<String, usize> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw_label = rec.get(label_i).unwrap_or_default();
        let Some(label) = schema.map_label(raw_label) else {
            *offenders.entry(raw_label.to_string()).or_insert(0) += 1;
            continue;
        };
        let id = match id_i {
            Some(i) => rec.get(i).unwrap_or_default().to_string(),
            None => (row + 1).to_string(),
        };
        let text = rec.get(text_i).unwrap_or_default().to_string();
        let tokens = match parses.and_then(|p| p.get(&id)) {
            Some(t) => t.clone(),
            None => whitespace_tokens(&text),
        };
        examples.push(LabeledExample {
            id,
            text,
            tokens,
            label,
        });
    }
    if !offenders.is_empty() {
        let list: Vec<String> = offenders
            .iter()
            .map(|(k, n)| format!("{k:?} x{n}"))
            .collect();
        return Err(Error::Schema(format!("unknown label values: {}", list.join(", "))));
    }
    let corpus = LabeledCorpus::new(examples);
    let (c, n) = corpus.counts();
    log::info!("loaded {} examples: {c} claims / {n} non-claims", corpus.len());
    Ok(corpus)
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema, companion: Option<&Path>) -> Result<LabeledCorpus> {
    let text = read_to_string(path)?;
    let delim = match schema.delimiter {
        Some(c) => c as u8,
        None if path.extension().is_some_and(|e| e == "tsv") => b'\t',
        None => b',',
    };
    let parses = companion.map(load_companion).transpose()?;
    load_dataset_str(&text, delim, schema, parses.as_ref())
}

/// Tokens per `sent_id` from a CoNLL-U file.
pub fn load_companion(path: &Path) -> Result<HashMap<String, Vec<Token>>> {
    companion_from_str(&read_to_string(path)?)
}

pub fn companion_from_str(text: &str) -> Result<HashMap<String, Vec<Token>>> {
    let mut out = HashMap::new();
    for s in parse_conllu_sentences(text)? {
        if let Some(id) = s.id {
            out.insert(
                id,
                s.tokens
                    .into_iter()
                    .map(|t| Token {
                        form: t.form,
                        upos: Some(t.upos),
                    })
                    .collect(),
            );
        }
    }
    Ok(out)
}

pub fn whitespace_tokens(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|w| Token {
            form: w.to_string(),
            upos: None,
        })
        .collect()
}

/// Majority:minority target ratio, or `Org` for no resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingSpec {
    Org,
    Ratio { majority: u32, minority: u32 },
}

impl SamplingSpec {
    pub fn ratio(majority: u32, minority: u32) -> Result<Self> {
        if majority < 1 || minority < 1 {
            return Err(Error::Config("sampling ratio parts must be >= 1".into()));
        }
        Ok(SamplingSpec::Ratio { majority, minority })
    }
}

impl FromStr for SamplingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('[').trim_end_matches(']');
        if s.eq_ignore_ascii_case("org") {
            return Ok(SamplingSpec::Org);
        }
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad sampling spec {s:?}")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad sampling spec {s:?}")))
        };
        SamplingSpec::ratio(parse(a)?, parse(b)?)
    }
}

impl fmt::Display for SamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingSpec::Org => f.write_str("org"),
            SamplingSpec::Ratio { majority, minority } => write!(f, "{majority}:{minority}"),
        }
    }
}

impl TryFrom<String> for SamplingSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SamplingSpec> for String {
    fn from(s: SamplingSpec) -> String {
        s.to_string()
    }
}

/// Target sizes `(majority, minority)` for the given class counts.
pub fn resample_targets(majority_count: usize, minority_count: usize, spec: SamplingSpec) -> (usize, usize) {
    match spec {
        SamplingSpec::Org => (majority_count, minority_count),
        SamplingSpec::Ratio { majority, minority } => {
            let target = minority_count * majority as usize / minority as usize;
            (target.min(majority_count), minority_count)
        }
    }
}

/// Downsample the larger class without replacement. Example order is
/// preserved.
pub fn resample(corpus: &LabeledCorpus, spec: SamplingSpec, rng: &mut Rng) -> Result<LabeledCorpus> {
    let claims = corpus.indices_of(Label::Claim);
    let non = corpus.indices_of(Label::NonClaim);
    if claims.is_empty() || non.is_empty() {
        return Err(Error::Sampling("both classes must be non-empty".into()));
    }
    if spec == SamplingSpec::Org {
        return Ok(corpus.clone());
    }
    let (mut major, minor) = if claims.len() >= non.len() {
        (claims, non)
    } else {
        (non, claims)
    };
    let (target, _) = resample_targets(major.len(), minor.len(), spec);
    let (chosen, _) = major.partial_shuffle(rng, target);
    let mut keep = chosen.to_vec();
    keep.extend(minor);
    Ok(corpus.subset(keep))
}

/// `n_splits` stratified train/validation shuffles.
pub fn split(
    corpus: &LabeledCorpus,
    seed: u64,
    n_splits: usize,
    val_fraction: f64,
) -> Result<Vec<(LabeledCorpus, LabeledCorpus)>> {
    if corpus.len() < 10 {
        return Err(Error::Sampling(format!(
            "need at least 10 examples to split, have {}",
            corpus.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config("val_fraction must be in (0, 1)".into()));
    }
    let strata = [corpus.indices_of(Label::Claim), corpus.indices_of(Label::NonClaim)];
    for (s, label) in strata.iter().zip(["claim", "non-claim"]) {
        if s.len() < n_splits {
            return Err(Error::Sampling(format!(
                "class {label} has {} examples, fewer than {n_splits} splits",
                s.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(n_splits);
    for k in 0..n_splits {
        let mut rng = seeded(derive_seed(seed, k as u64));
        let mut train = Vec::new();
        let mut val = Vec::new();
        for stratum in &strata {
            let mut idx = stratum.clone();
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
            val.extend_from_slice(&idx[..n_val]);
            train.extend_from_slice(&idx[n_val..]);
        }
        out.push((corpus.subset(train), corpus.subset(val)));
    }
    Ok(out)
}

/// Padded `max_len x dim` matrix with the real-token mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub matrix: Tensor,
    pub mask: Vec<bool>,
}

impl EncodedText {
    /// Number of real tokens (a right-padded prefix).
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unpadded rows; a single PAD row for empty inputs.
    pub fn real_rows(&self) -> Tensor {
        let l = self.len().max(1);
        Tensor::from_vec(l, self.matrix.cols, self.matrix.data[..l * self.matrix.cols].to_vec())
    }

    pub fn to_debug_string(&self) -> String {
        let mut s = format!("mask {:?}\n", self.mask.iter().map(|m| *m as u8).collect::<Vec<_>>());
        for r in 0..self.matrix.rows {
            let row: Vec<String> = self.matrix.row(r).iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&format!("[{}]\n", row.join(", ")));
        }
        s
    }
}

/// Token-to-vector lookup shared by every encode call.
pub struct Encoder<'a> {
    pub vocab: &'a Vocab,
    pub table: &'a EmbeddingTable,
    pub max_len: usize,
    pub pos_backoff: bool,
    unk: Vec<f64>,
    by_form: HashMap<String, Vec<usize>>,
}

impl<'a> Encoder<'a> {
    pub fn new(vocab: &'a Vocab, table: &'a EmbeddingTable, max_len: usize, pos_backoff: bool) -> Self {
        let mut by_form: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, k) in table.keys().iter().enumerate() {
            if let Some((form, _)) = crate::ingest::split_key(k) {
                by_form.entry(form.to_string()).or_default().push(i);
            }
        }
        Encoder {
            vocab,
            table,
            max_len,
            pos_backoff,
            unk: table.mean_vector(),
            by_form,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    fn backoff(&self, form: &str) -> Option<Vec<f64>> {
        let rows = self.by_form.get(&form.to_lowercase())?;
        let mut v = vec![0.0; self.dim()];
        for &r in rows {
            for (a, b) in v.iter_mut().zip(self.table.row(r)) {
                *a += b;
            }
        }
        v.iter_mut().for_each(|a| *a /= rows.len() as f64);
        Some(v)
    }

    pub fn token_vector(&self, tok: &Token, allow_backoff: bool) -> Vec<f64> {
        if let Some(key) = tok.key() {
            if self.vocab.id(&key) != UNK_ID {
                if let Some(v) = self.table.get(&key) {
                    return v.to_vec();
                }
            }
        }
        if self.pos_backoff || allow_backoff {
            if let Some(v) = self.backoff(&tok.form) {
                return v;
            }
        }
        self.unk.clone()
    }

    pub fn encode_tokens(&self, tokens: &[Token], allow_backoff: bool) -> EncodedText {
        let dim = self.dim();
        let mut matrix = Tensor::zeros(self.max_len, dim);
        let mut mask = vec![false; self.max_len];
        for (i, tok) in tokens.iter().take(self.max_len).enumerate() {
            matrix.row_mut(i).copy_from_slice(&self.token_vector(tok, allow_backoff));
            mask[i] = true;
        }
        EncodedText { matrix, mask }
    }

    pub fn encode(&self, example: &LabeledExample) -> EncodedText {
        self.encode_tokens(&example.tokens, false)
    }
}

/// Encode one example; see [`Encoder`] for the lookup policy.
pub fn encode_text(example: &LabeledExample, vocab: &Vocab, table: &EmbeddingTable, max_len: usize) -> EncodedText {
    Encoder::new(vocab, table, max_len, false).encode(example)
}

/// Vocabulary over the POS keys present in a corpus.
pub fn corpus_vocab(corpus: &LabeledCorpus, limit: usize) -> Result<Vocab> {
    if limit < 3 {
        return Err(Error::Config(format!("vocab limit must be >= 3, got {limit}")));
    }
    let mut counts = HashMap::new();
    for e in &corpus.examples {
        for t in &e.tokens {
            if let Some(k) = t.key() {
                *counts.entry(k).or_insert(0usize) += 1;
            }
        }
    }
    Ok(crate::ingest::vocab_from_counts(counts, limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poincare::DEFAULT_EPS_BALL;

    fn ex(id: usize, label: Label) -> LabeledExample {
        LabeledExample {
            id: id.to_string(),
            text: format!("text {id}"),
            tokens: vec![],
            label,
        }
    }

    fn corpus(claims: usize, non: usize) -> LabeledCorpus {
        let mut v: Vec<_> = (0..claims).map(|i| ex(i, Label::Claim)).collect();
        v.extend((0..non).map(|i| ex(claims + i, Label::NonClaim)));
        LabeledCorpus::new(v)
    }

    #[test]
    fn csv_with_partial_label_map() {
        let mut schema = DatasetSchema::new("text", "label");
        schema.label_map.insert("1".into(), Label::Claim);
        schema.other_label = Some(Label::NonClaim);
        let c = load_dataset_str("text,label\nvaccines work,1\nhello there,0\n", b',', &schema, None).unwrap();
        assert_eq!(c.counts(), (1, 1));
    }

    #[test]
    fn unknown_labels_are_listed() {
        let mut schema = DatasetSchema::new("text", "label");
        schema.label_map.insert("1".into(), Label::Claim);
        let err = load_dataset_str("text,label\na,1\nb,7\nc,7\n", b',', &schema, None).unwrap_err();
        match err {
            Error::Schema(m) => assert!(m.contains("\"7\" x2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_text_column() {
        let schema = DatasetSchema::new("tweet", "label");
        assert!(matches!(
            load_dataset_str("text,label\na,1\n", b',', &schema, None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn companion_parses_supply_pos() {
        let conllu = "# sent_id = a\n1\tVaccines\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n2\twork\t_\tVERB\t_\t_\t0\troot\t_\t_\n";
        let parses = companion_from_str(conllu).unwrap();
        let mut schema = DatasetSchema::new("text", "label");
        schema.id_col = Some("id".into());
        let c = load_dataset_str("id,text,label\na,Vaccines work,claim\nb,hi,non-claim\n", b',', &schema, Some(&parses)).unwrap();
        assert_eq!(c.examples[0].tokens[0].key().as_deref(), Some("vaccines.NOUN"));
        assert_eq!(c.examples[1].tokens[0].upos, None);
    }

    #[test]
    fn twitter_arithmetic() {
        assert_eq!(resample_targets(7354, 1055, SamplingSpec::ratio(5, 2).unwrap()), (2637, 1055));
        assert_eq!(resample_targets(7354, 1055, SamplingSpec::ratio(1, 1).unwrap()), (1055, 1055));
        assert_eq!(resample_targets(7354, 1055, SamplingSpec::Org), (7354, 1055));
    }

    #[test]
    fn resample_counts_and_no_duplicates() {
        let c = corpus(70, 10);
        let r = resample(&c, "5:2".parse().unwrap(), &mut seeded(1)).unwrap();
        assert_eq!(r.counts(), (25, 10));
        let mut ids: Vec<_> = r.examples.iter().map(|e| e.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 35);
        // majority non-claims
        let c = corpus(4, 30);
        let r = resample(&c, "1:1".parse().unwrap(), &mut seeded(1)).unwrap();
        assert_eq!(r.counts(), (4, 4));
        let r = resample(&c, SamplingSpec::Org, &mut seeded(1)).unwrap();
        assert_eq!(r, c);
        assert!(matches!(
            resample(&corpus(5, 0), SamplingSpec::Org, &mut seeded(1)),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn sampling_spec_parsing() {
        assert_eq!("[5:2]".parse::<SamplingSpec>().unwrap().to_string(), "5:2");
        assert_eq!("Org".parse::<SamplingSpec>().unwrap(), SamplingSpec::Org);
        assert!("0:2".parse::<SamplingSpec>().is_err());
        assert!("x".parse::<SamplingSpec>().is_err());
    }

    #[test]
    fn stratified_split_of_ten() {
        let c = corpus(5, 5);
        let splits = split(&c, 3, 5, 0.2).unwrap();
        assert_eq!(splits.len(), 5);
        for (train, val) in &splits {
            assert_eq!(val.counts(), (1, 1));
            assert_eq!(train.len() + val.len(), 10);
            let mut all: Vec<_> = train.examples.iter().chain(&val.examples).map(|e| e.id.clone()).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 10);
        }
        assert_eq!(splits, split(&c, 3, 5, 0.2).unwrap());
        assert!(split(&corpus(3, 20), 0, 5, 0.2).is_err());
        assert!(split(&corpus(3, 3), 0, 2, 0.2).is_err());
    }

    fn small_table() -> (Vocab, EmbeddingTable) {
        let mut t = EmbeddingTable::new(3, DEFAULT_EPS_BALL);
        t.insert("vaccines.NOUN", &[0.1, 0.2, 0.3]).unwrap();
        t.insert("work.VERB", &[-0.1, 0.0, 0.5]).unwrap();
        t.insert("work.NOUN", &[0.3, 0.0, 0.1]).unwrap();
        let mut counts = HashMap::new();
        for k in t.keys() {
            counts.insert(k.clone(), 1);
        }
        (crate::ingest::vocab_from_counts(counts, 100), t)
    }

    #[test]
    fn encode_examples() {
        let (v, t) = small_table();
        let empty = ex(0, Label::Claim);
        let e = encode_text(&empty, &v, &t, 50);
        assert_eq!(e.matrix.shape(), (50, 3));
        assert!(e.matrix.data.iter().all(|x| *x == 0.0));
        assert!(e.is_empty());
        assert_eq!(e.real_rows().rows, 1);

        let mut long = ex(1, Label::Claim);
        long.tokens = (0..60)
            .map(|_| Token {
                form: "Vaccines".into(),
                upos: Some("NOUN".into()),
            })
            .collect();
        let e = encode_text(&long, &v, &t, 50);
        assert_eq!(e.len(), 50);
        assert_eq!(e.matrix.row(0), &[0.1, 0.2, 0.3]);

        let mut oov = ex(2, Label::Claim);
        oov.tokens = vec![Token {
            form: "zzz".into(),
            upos: Some("X".into()),
        }];
        let e = encode_text(&oov, &v, &t, 4);
        assert_eq!(e.matrix.row(0), t.mean_vector().as_slice());
        assert!(e.matrix.row(1).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn pos_backoff_averages_forms() {
        let (v, t) = small_table();
        let enc = Encoder::new(&v, &t, 4, true);
        let e = enc.encode_tokens(&[Token { form: "Work".into(), upos: None }], false);
        assert!((e.matrix.get(0, 0) - 0.1).abs() < 1e-12);
        assert!((e.matrix.get(0, 2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn vocab_limit_maps_rare_keys_to_unk() {
        let (_, t) = small_table();
        let mut c = corpus(1, 0);
        c.examples[0].tokens = vec![
            Token { form: "vaccines".into(), upos: Some("NOUN".into()) },
            Token { form: "vaccines".into(), upos: Some("NOUN".into()) },
            Token { form: "work".into(), upos: Some("VERB".into()) },
        ];
        let v = corpus_vocab(&c, 3).unwrap();
        let e = encode_text(&c.examples[0], &v, &t, 5);
        assert_eq!(e.matrix.row(0), &[0.1, 0.2, 0.3]);
        assert_eq!(e.matrix.row(2), t.mean_vector().as_slice());
    }
}
