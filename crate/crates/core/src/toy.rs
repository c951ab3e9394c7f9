//! A small synthetic claim corpus with hand-built dependency parses.
//!
//! Claims always carry one token from an assertion-marker family
//! ("clearly", "undeniably", ...). Non-claims never contain a marker:
//! they are plain statements and yes/no questions over the claims' own
//! subjects, verbs and objects, or short personal chatter.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{DatasetSchema, Label};
use crate::protocol::RunConfig;
use crate::util::{seeded, write_atomic};
use crate::Result;

pub const MARKERS: &[&str] = &["clearly", "definitely", "undeniably", "certainly", "obviously", "absolutely"];
const SUBJECTS: &[&str] = &[
    "government", "minister", "study", "report", "senator", "company", "vaccine", "police", "scientist", "mayor", "economy", "union",
];
const VERBS: &[&str] = &["caused", "raised", "cut", "hid", "doubled", "banned", "approved", "reduced", "funded", "leaked"];
const OBJECTS: &[&str] = &["taxes", "prices", "jobs", "crime", "emissions", "wages", "budget", "data", "profits", "votes"];
const PERSONAL_VERBS: &[&str] = &["love", "miss", "enjoy", "need", "hate"];
const PERSONAL_OBJECTS: &[&str] = &["coffee", "song", "weekend", "weather", "pizza", "movie"];

pub const CSV_FILE: &str = "toy.csv";
pub const CONLLU_FILE: &str = "toy.conllu";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CONFIG_FILE: &str = "toy.json";

/// One token row: form, UPOS, head (0 = root), relation.
type Row = (&'static str, &'static str, usize, &'static str);

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub id: String,
    pub rows: Vec<(String, String, usize, String)>,
    pub label: Label,
}

impl ToyExample {
    pub fn text(&self) -> String {
        self.rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(" ")
    }
}

fn build(id: String, rows: &[Row], label: Label) -> ToyExample {
    ToyExample {
        id,
        rows: rows
            .iter()
            .map(|(f, u, h, d)| (f.to_string(), u.to_string(), *h, d.to_string()))
            .collect(),
        label,
    }
}

fn claim(id: String, rng: &mut crate::util::Rng) -> ToyExample {
    let s = *SUBJECTS.choose(rng).unwrap();
    let v = *VERBS.choose(rng).unwrap();
    let o = *OBJECTS.choose(rng).unwrap();
    let m = *MARKERS.choose(rng).unwrap();
    let rows: Vec<Row> = match rng.gen_range(0..3) {
        0 => vec![
            ("the", "DET", 2, "det"),
            (s, "NOUN", 4, "nsubj"),
            (m, "ADV", 4, "advmod"),
            (v, "VERB", 0, "root"),
            ("the", "DET", 6, "det"),
            (o, "NOUN", 4, "obj"),
            (".", "PUNCT", 4, "punct"),
        ],
        1 => vec![
            (m, "ADV", 5, "advmod"),
            (",", "PUNCT", 5, "punct"),
            ("the", "DET", 4, "det"),
            (s, "NOUN", 5, "nsubj"),
            (v, "VERB", 0, "root"),
            (o, "NOUN", 5, "obj"),
            (".", "PUNCT", 5, "punct"),
        ],
        _ => vec![
            ("the", "DET", 2, "det"),
            (s, "NOUN", 3, "nsubj"),
            (v, "VERB", 0, "root"),
            ("the", "DET", 5, "det"),
            (o, "NOUN", 3, "obj"),
            (m, "ADV", 3, "advmod"),
            (".", "PUNCT", 3, "punct"),
        ],
    };
    build(id, &rows, Label::Claim)
}

fn nonclaim(id: String, rng: &mut crate::util::Rng) -> ToyExample {
    let s = *SUBJECTS.choose(rng).unwrap();
    let v = *VERBS.choose(rng).unwrap();
    let o = *OBJECTS.choose(rng).unwrap();
    let pv = *PERSONAL_VERBS.choose(rng).unwrap();
    let po = *PERSONAL_OBJECTS.choose(rng).unwrap();
    let rows: Vec<Row> = match rng.gen_range(0..10) {
        0..=3 => vec![
            ("the", "DET", 2, "det"),
            (s, "NOUN", 3, "nsubj"),
            (v, "VERB", 0, "root"),
            ("the", "DET", 5, "det"),
            (o, "NOUN", 3, "obj"),
            (".", "PUNCT", 3, "punct"),
        ],
        4 | 5 => vec![
            ("did", "AUX", 4, "aux"),
            ("the", "DET", 3, "det"),
            (s, "NOUN", 4, "nsubj"),
            (v, "VERB", 0, "root"),
            ("the", "DET", 6, "det"),
            (o, "NOUN", 4, "obj"),
            ("?", "PUNCT", 4, "punct"),
        ],
        6..=8 => vec![
            ("i", "PRON", 2, "nsubj"),
            (pv, "VERB", 0, "root"),
            ("this", "DET", 4, "det"),
            (po, "NOUN", 2, "obj"),
            ("so", "ADV", 6, "advmod"),
            ("much", "ADV", 2, "advmod"),
            ("!", "PUNCT", 2, "punct"),
        ],
        _ => vec![
            ("good", "ADJ", 2, "amod"),
            ("morning", "NOUN", 0, "root"),
            (",", "PUNCT", 4, "punct"),
            ("everyone", "PRON", 2, "vocative"),
            ("!", "PUNCT", 2, "punct"),
        ],
    };
    build(id, &rows, Label::NonClaim)
}

/// `n` examples of which `n_claims` are claims, in a seeded shuffled order.
pub fn generate(n: usize, n_claims: usize, seed: u64) -> Vec<ToyExample> {
    let mut rng = seeded(seed);
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_claims { Label::Claim } else { Label::NonClaim })
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let id = format!("t{i:04}");
            match l {
                Label::Claim => claim(id, &mut rng),
                Label::NonClaim => nonclaim(id, &mut rng),
            }
        })
        .collect()
}

/// The bundled corpus: 200 examples, 150 claims.
pub fn bundled() -> Vec<ToyExample> {
    generate(200, 150, 2024)
}

pub fn to_csv(examples: &[ToyExample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "text", "label"])?;
    for ex in examples {
        let raw = match ex.label {
            Label::Claim => "1",
            Label::NonClaim => "0",
        };
        w.write_record([ex.id.as_str(), ex.text().as_str(), raw])?;
    }
    w.into_inner().map_err(|e| crate::Error::Invalid(e.to_string()))
}

pub fn to_conllu(examples: &[ToyExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let _ = writeln!(out, "# sent_id = {}", ex.id);
        let _ = writeln!(out, "# text = {}", ex.text());
        for (i, (form, upos, head, rel)) in ex.rows.iter().enumerate() {
            let _ = writeln!(out, "{}\t{form}\t{form}\t{upos}\t_\t_\t{head}\t{rel}\t_\t_", i + 1);
        }
        out.push('\n');
    }
    out
}

pub fn schema() -> DatasetSchema {
    let mut s = DatasetSchema::new("text", "label");
    s.id_col = Some("id".into());
    s.label_map.insert("1".into(), Label::Claim);
    s.label_map.insert("0".into(), Label::NonClaim);
    s
}

/// Desk-scale settings for the toy corpus. Paths are relative to the
/// directory the toy files live in.
pub fn run_config() -> RunConfig {
    let mut cfg = RunConfig {
        dataset: Some(CSV_FILE.into()),
        schema: Some(SCHEMA_FILE.into()),
        companion: Some(CONLLU_FILE.into()),
        epochs: 60,
        batch_size: 16,
        patience: 10,
        val_fraction: 0.2,
        max_len: 20,
        seed: 7,
        ..Default::default()
    };
    cfg.dare.dim = 10;
    cfg.dare.epochs = 50;
    cfg.dare.seed = 7;
    cfg.model.emb_dim = 10;
    cfg.model.fnet_hidden = 12;
    cfg.model.fnet_depth = 2;
    cfg.model.dnet_hidden = 8;
    cfg.adam.lr = 0.01;
    cfg
}

/// Write the CSV, CoNLL-U, schema and config into `dir`.
pub fn write_toy(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let ex = bundled();
    write_atomic(&dir.join(CSV_FILE), &to_csv(&ex)?)?;
    write_atomic(&dir.join(CONLLU_FILE), to_conllu(&ex).as_bytes())?;
    write_atomic(&dir.join(SCHEMA_FILE), serde_json::to_string_pretty(&schema())?.as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&run_config())?.as_bytes())?;
    Ok(())
}
