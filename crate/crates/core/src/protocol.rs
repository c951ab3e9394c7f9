//! The training protocol: resample, split, train one model per split and
//! focusing parameter, vote, and write the run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dare::{load_embeddings, save_embeddings, train_dare, DareConfig, EmbeddingTable};
use crate::data::{corpus_vocab, load_dataset, resample, split, DatasetSchema, Encoder, Label, LabeledCorpus, SamplingSpec};
use crate::eval::{f1_scores, format_table, MemberReport, Metrics, RunReport};
use crate::ingest::{parse_conllu_sentences, GraphOptions, HierarchyGraph, Vocab};
use crate::model::{vote, DefinitionBank, DesyrModel, EncodedBank, ModelConfig};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::util::{derive_seed, read_to_string, seeded, write_atomic};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "run_summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const VOTED_FILE: &str = "predictions/voted.csv";
pub const THREADS_ENV: &str = "DESYR_THREADS";

pub fn checkpoint_name(split: usize, gamma: f64) -> PathBuf {
    PathBuf::from(format!("checkpoints/split{split}_gamma{gamma}.json"))
}

pub fn predictions_name(split: usize, gamma: f64) -> PathBuf {
    PathBuf::from(format!("predictions/split{split}_gamma{gamma}.csv"))
}

/// Everything a `train` run needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// CoNLL-U parses of the dataset, keyed by `sent_id` = example id.
    pub companion: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub test_companion: Option<PathBuf>,
    /// Pre-trained table; when unset the table is trained in-run.
    pub embeddings: Option<PathBuf>,
    /// Extra CoNLL-U for in-run DARE training; defaults to the companions.
    pub dare_corpus: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub dare: DareConfig,
    pub graph: GraphOptions,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub gammas: Vec<f64>,
    pub splits: usize,
    pub sampling: SamplingSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub val_fraction: f64,
    /// Held-out share used as the test set when `test_dataset` is unset.
    pub test_fraction: f64,
    pub max_len: usize,
    pub vocab_limit: usize,
    pub pos_backoff: bool,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            schema: None,
            companion: None,
            test_dataset: None,
            test_companion: None,
            embeddings: None,
            dare_corpus: None,
            definitions: None,
            dare: DareConfig::default(),
            graph: GraphOptions::default(),
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            gammas: vec![1.0, 2.0, 3.0],
            splits: 5,
            sampling: SamplingSpec::Ratio { majority: 5, minority: 2 },
            epochs: 100,
            batch_size: 32,
            patience: 10,
            val_fraction: 0.1,
            test_fraction: 0.2,
            max_len: 50,
            vocab_limit: 30_000,
            pos_backoff: false,
            seed: 0,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.dataset,
            &mut self.schema,
            &mut self.companion,
            &mut self.test_dataset,
            &mut self.test_companion,
            &mut self.embeddings,
            &mut self.dare_corpus,
            &mut self.definitions,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Check the hyperparameters only.
    pub fn validate_settings(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.gammas.is_empty() {
            return bad("gammas must be non-empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return bad(format!("gamma must be finite and >= 0, got {g}"));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("splits", self.splits),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [("val_fraction", self.val_fraction), ("test_fraction", self.test_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        if !(self.adam.lr > 0.0) {
            return bad("adam.lr must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        self.dare.validate()?;
        self.model.validate()?;
        if self.embeddings.is_none() && self.dare.dim != self.model.emb_dim {
            return bad(format!(
                "model.emb_dim {} differs from dare.dim {}",
                self.model.emb_dim, self.dare.dim
            ));
        }
        Ok(())
    }

    /// Settings plus the presence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        if self.dataset.is_none() || self.schema.is_none() {
            return Err(Error::Config("dataset and schema are required".into()));
        }
        for p in [
            &self.dataset,
            &self.schema,
            &self.companion,
            &self.test_dataset,
            &self.test_companion,
            &self.embeddings,
            &self.dare_corpus,
            &self.definitions,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("path does not exist: {}", p.display())));
            }
        }
        if self.embeddings.is_none() && self.dare_corpus.is_none() && self.companion.is_none() {
            return Err(Error::Config(
                "no embeddings given and no CoNLL-U to train them on (set embeddings, dare_corpus or companion)".into(),
            ));
        }
        Ok(())
    }

    /// Worker count: the configured value (or all cores) capped by
    /// `DESYR_THREADS`.
    pub fn thread_count(&self) -> usize {
        let base = self
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|n| *n > 0);
        cap.map_or(base, |c| base.min(c)).max(1)
    }
}

/// One row of a predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
    pub prob_claim: f64,
}

pub fn predictions_to_csv(preds: &[Prediction]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in preds {
        w.serialize(p)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_atomic(path, &predictions_to_csv(preds)?)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Gold labels from an `id,label` CSV.
pub fn read_gold(path: &Path) -> Result<Vec<(String, Label)>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        label: Label,
    }
    let text = read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<Row>()
        .map(|row| row.map(|r| (r.id, r.label)).map_err(Error::from))
        .collect()
}

/// Score predictions against gold labels, matched by id.
pub fn score_predictions(preds: &[Prediction], gold: &[(String, Label)]) -> Result<Metrics> {
    let by_id: std::collections::HashMap<&str, Label> = preds.iter().map(|p| (p.id.as_str(), p.label)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::Invalid("duplicate ids in predictions".into()));
    }
    let mut p = Vec::with_capacity(gold.len());
    let mut g = Vec::with_capacity(gold.len());
    for (id, label) in gold {
        let pl = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Lookup(format!("no prediction for id {id}")))?;
        p.push(*pl);
        g.push(*label);
    }
    if preds.len() != gold.len() {
        return Err(Error::Shape(format!("{} predictions for {} gold rows", preds.len(), gold.len())));
    }
    f1_scores(&p, &g)
}

/// Loaded inputs for a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: EmbeddingTable,
    pub trained_embeddings: bool,
    pub vocab: Vocab,
    pub definitions: Option<DefinitionBank>,
    pub train_pool: LabeledCorpus,
    pub test: LabeledCorpus,
}

/// Train a table on CoNLL-U text.
pub fn embeddings_from_conllu(texts: &[String], graph: GraphOptions, dare: &DareConfig) -> Result<EmbeddingTable> {
    let mut sentences = Vec::new();
    for t in texts {
        sentences.extend(parse_conllu_sentences(t)?);
    }
    let graph = HierarchyGraph::from_sentences(sentences.iter().map(|s| &s.tokens), graph)?;
    log::info!(
        "training DARE on {} edges over {} nodes",
        graph.edges.len(),
        graph.node_keys.len()
    );
    train_dare(&graph, dare)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let schema = DatasetSchema::from_json_file(cfg.schema.as_ref().expect("validated"))?;
    let corpus = load_dataset(cfg.dataset.as_ref().expect("validated"), &schema, cfg.companion.as_deref())?;
    let (train_pool, test) = match &cfg.test_dataset {
        Some(p) => (corpus, load_dataset(p, &schema, cfg.test_companion.as_deref())?),
        None => {
            let mut parts = split(&corpus, derive_seed(cfg.seed, 0x7e57), 1, cfg.test_fraction)?;
            parts.pop().expect("one split")
        }
    };
    let (table, trained) = match &cfg.embeddings {
        Some(p) => (load_embeddings(p)?, false),
        None => {
            let sources: Vec<&PathBuf> = match &cfg.dare_corpus {
                Some(p) => vec![p],
                None => cfg.companion.iter().chain(&cfg.test_companion).collect(),
            };
            let texts = sources.into_iter().map(|p| read_to_string(p)).collect::<Result<Vec<_>>>()?;
            (embeddings_from_conllu(&texts, cfg.graph, &cfg.dare)?, true)
        }
    };
    if table.dim() != cfg.model.emb_dim {
        return Err(Error::Config(format!(
            "embedding dim {} differs from model.emb_dim {}",
            table.dim(),
            cfg.model.emb_dim
        )));
    }
    let vocab = corpus_vocab(&train_pool, cfg.vocab_limit)?;
    let definitions = if cfg.model.use_dnet {
        Some(match &cfg.definitions {
            Some(p) => DefinitionBank::load(p)?,
            None => DefinitionBank::bundled(),
        })
    } else {
        None
    };
    let (c, n) = train_pool.counts();
    let (tc, tn) = test.counts();
    log::info!("train pool {c} claims / {n} non-claims; test {tc} / {tn}");
    Ok(Prepared {
        table,
        trained_embeddings: trained,
        vocab,
        definitions,
        train_pool,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_m_f1: f64,
}

/// A trained ensemble member with its best validation weights restored.
#[derive(Debug, Clone)]
pub struct Member {
    pub split: usize,
    pub gamma: f64,
    pub seed: u64,
    pub model: DesyrModel,
    pub best_epoch: usize,
    pub val_m_f1: f64,
    pub history: Vec<EpochLog>,
}

pub fn predict_labels(model: &DesyrModel, bank: Option<&EncodedBank>, inputs: &[Tensor]) -> Vec<(Label, f64)> {
    model
        .forward_rows(bank, inputs)
        .iter()
        .map(|o| (o.label(), o.prob_claim()))
        .collect()
}

/// Train one model with Adam and early stopping on validation macro-F1.
pub fn train_member(
    cfg: &RunConfig,
    bank: Option<&EncodedBank>,
    train: &[(Tensor, Label)],
    val: &[(Tensor, Label)],
    (split, gamma, seed): (usize, f64, u64),
) -> Result<Member> {
    let (nc, nn) = bank.map(|b| (b.claim.len(), b.nonclaim.len())).unwrap_or((0, 0));
    let mut model = DesyrModel::new(cfg.model.clone(), nc, nn, seed)?;
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut rng = seeded(derive_seed(seed, 1));
    let val_x: Vec<Tensor> = val.iter().map(|(x, _)| x.clone()).collect();
    let val_y: Vec<Label> = val.iter().map(|(_, y)| *y).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0, model.store.clone());
    let mut since = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor, Label)> = chunk.iter().map(|&i| (&train[i].0, train[i].1)).collect();
            let (loss, grads) = model.batch_gradients(bank, &batch, gamma, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    edge: format!("split {split} gamma {gamma}"),
                    loss,
                });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.store, &grads);
        }
        let pred: Vec<Label> = predict_labels(&model, bank, &val_x).into_iter().map(|p| p.0).collect();
        let m = f1_scores(&pred, &val_y)?.m_f1;
        let train_loss = total / train.len() as f64;
        log::debug!("split {split} gamma {gamma} epoch {epoch}: loss {train_loss:.5} val m-F1 {m:.4}");
        history.push(EpochLog {
            epoch,
            train_loss,
            val_m_f1: m,
        });
        if m > best.0 {
            best = (m, epoch, model.store.clone());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let (val_m_f1, best_epoch, store) = best;
    model.store = store;
    log::info!("split {split} gamma {gamma}: best val m-F1 {val_m_f1:.4} at epoch {best_epoch}");
    Ok(Member {
        split,
        gamma,
        seed,
        model,
        best_epoch,
        val_m_f1,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sampling: SamplingSpec,
    pub seeds: Vec<u64>,
    pub train_counts: (usize, usize),
    pub test_counts: (usize, usize),
    pub members: Vec<MemberReport>,
    pub voted: Metrics,
    pub param_count: usize,
    pub wall_time_secs: f64,
}

pub struct RunOutcome {
    pub members: Vec<Member>,
    pub member_predictions: Vec<Vec<Prediction>>,
    pub voted: Vec<Prediction>,
    pub summary: RunSummary,
}

fn encode_corpus(encoder: &Encoder<'_>, corpus: &LabeledCorpus) -> Vec<(Tensor, Label)> {
    corpus
        .examples
        .iter()
        .map(|ex| (encoder.encode(ex).real_rows(), ex.label))
        .collect()
}

/// Resample, split, train `splits x gammas` members in parallel, vote on
/// the test set.
pub fn run_ensemble(cfg: &RunConfig, prep: &Prepared) -> Result<RunOutcome> {
    cfg.validate_settings()?;
    let start = Instant::now();
    let encoder = Encoder::new(&prep.vocab, &prep.table, cfg.max_len, cfg.pos_backoff);
    let bank = prep.definitions.as_ref().map(|d| d.encode(&encoder));

    let mut rs_rng = seeded(derive_seed(cfg.seed, 0x5a3));
    let pool = resample(&prep.train_pool, cfg.sampling, &mut rs_rng)?;
    let splits = split(&pool, derive_seed(cfg.seed, 0x5b1), cfg.splits, cfg.val_fraction)?;
    let encoded: Vec<(Vec<(Tensor, Label)>, Vec<(Tensor, Label)>)> = splits
        .iter()
        .map(|(tr, va)| (encode_corpus(&encoder, tr), encode_corpus(&encoder, va)))
        .collect();
    let test = encode_corpus(&encoder, &prep.test);
    let test_x: Vec<Tensor> = test.iter().map(|(x, _)| x.clone()).collect();
    let test_y: Vec<Label> = test.iter().map(|(_, y)| *y).collect();

    let mut jobs = Vec::new();
    for s in 0..cfg.splits {
        for (gi, &g) in cfg.gammas.iter().enumerate() {
            jobs.push((s, g, derive_seed(cfg.seed, 1000 + (s * cfg.gammas.len() + gi) as u64)));
        }
    }
    let pool_threads = cfg.thread_count();
    log::info!("training {} members on {pool_threads} threads", jobs.len());
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let members: Vec<Member> = threads.install(|| {
        jobs.par_iter()
            .map(|&(s, g, seed)| {
                let (tr, va) = &encoded[s];
                train_member(cfg, bank.as_ref(), tr, va, (s, g, seed))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let member_outputs: Vec<Vec<(Label, f64)>> = threads.install(|| {
        members
            .par_iter()
            .map(|m| predict_labels(&m.model, bank.as_ref(), &test_x))
            .collect()
    });
    let ids: Vec<&str> = prep.test.examples.iter().map(|e| e.id.as_str()).collect();
    let member_predictions: Vec<Vec<Prediction>> = member_outputs
        .iter()
        .map(|out| {
            out.iter()
                .zip(&ids)
                .map(|((l, p), id)| Prediction {
                    id: id.to_string(),
                    label: *l,
                    prob_claim: *p,
                })
                .collect()
        })
        .collect();
    let member_labels: Vec<Vec<Label>> = member_outputs.iter().map(|o| o.iter().map(|p| p.0).collect()).collect();
    let voted_labels = vote(&member_labels)?;
    let voted: Vec<Prediction> = voted_labels
        .iter()
        .enumerate()
        .map(|(i, l)| Prediction {
            id: ids[i].to_string(),
            label: *l,
            prob_claim: member_outputs.iter().map(|o| o[i].1).sum::<f64>() / member_outputs.len() as f64,
        })
        .collect();

    let mut reports = Vec::with_capacity(members.len());
    for (m, labels) in members.iter().zip(&member_labels) {
        reports.push(MemberReport {
            split: m.split,
            gamma: m.gamma,
            seed: m.seed,
            epochs_trained: m.history.len(),
            best_epoch: m.best_epoch,
            val_m_f1: m.val_m_f1,
            test: f1_scores(labels, &test_y)?,
        });
    }
    let voted_metrics = f1_scores(&voted_labels, &test_y)?;
    let summary = RunSummary {
        sampling: cfg.sampling,
        seeds: std::iter::once(cfg.seed).chain(members.iter().map(|m| m.seed)).collect(),
        train_counts: pool.counts(),
        test_counts: prep.test.counts(),
        members: reports,
        voted: voted_metrics,
        param_count: members.first().map_or(0, |m| m.model.param_count()),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        members,
        member_predictions,
        voted,
        summary,
    })
}

/// Write checkpoints, predictions, the summary and the report.
pub fn write_run(run_dir: &Path, cfg: &RunConfig, prep: &Prepared, outcome: &RunOutcome) -> Result<RunReport> {
    std::fs::create_dir_all(run_dir.join("checkpoints")).map_err(|e| Error::io(run_dir, e))?;
    std::fs::create_dir_all(run_dir.join("predictions")).map_err(|e| Error::io(run_dir, e))?;
    write_atomic(&run_dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    if prep.trained_embeddings {
        save_embeddings(&prep.table, &run_dir.join(EMBEDDINGS_FILE))?;
    }
    for (m, preds) in outcome.members.iter().zip(&outcome.member_predictions) {
        let ck = Checkpoint::from_model(
            &m.model,
            m.gamma,
            m.seed,
            m.split,
            cfg.max_len,
            cfg.pos_backoff,
            &prep.vocab,
            prep.definitions.as_ref(),
            &prep.table,
        );
        ck.save(&run_dir.join(checkpoint_name(m.split, m.gamma)))?;
        write_predictions(&run_dir.join(predictions_name(m.split, m.gamma)), preds)?;
    }
    write_predictions(&run_dir.join(VOTED_FILE), &outcome.voted)?;
    let gold: Vec<u8> = {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label"])?;
        for ex in &prep.test.examples {
            w.write_record([ex.id.as_str(), ex.label.as_str()])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?
    };
    write_atomic(&run_dir.join("predictions/gold.csv"), &gold)?;
    write_atomic(&run_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&outcome.summary)?.as_bytes())?;
    let report = crate::eval::report(run_dir)?;
    Ok(report)
}

/// Train and write a full run.
pub fn run(cfg: &RunConfig, run_dir: &Path) -> Result<RunReport> {
    let prep = prepare(cfg)?;
    let outcome = run_ensemble(cfg, &prep)?;
    write_run(run_dir, cfg, &prep, &outcome)
}

/// The Org / [1:1] / [5:2] rows, each a full voted ensemble.
pub fn sampling_sweep(cfg: &RunConfig, prep: &Prepared, specs: &[SamplingSpec]) -> Result<(Vec<(String, Metrics)>, String)> {
    let mut rows = Vec::new();
    for spec in specs {
        let c = RunConfig {
            sampling: *spec,
            ..cfg.clone()
        };
        let out = run_ensemble(&c, prep)?;
        let name = match spec {
            SamplingSpec::Org => "DESYR Org".to_string(),
            s => format!("DESYR [{s}]"),
        };
        rows.push((name, out.summary.voted));
    }
    let table = format_table(&rows);
    Ok((rows, table))
}

/// Encode a corpus and run every checkpoint over it.
pub fn predict_with_checkpoint(ck: &Checkpoint, table: &EmbeddingTable, corpus: &LabeledCorpus) -> Result<Vec<Prediction>> {
    ck.check_table(table)?;
    let model = ck.restore()?;
    let encoder = Encoder::new(&ck.vocab, table, ck.max_len, ck.pos_backoff);
    let bank = ck.definitions.as_ref().map(|d| d.encode(&encoder));
    let inputs: Vec<Tensor> = corpus.examples.iter().map(|e| encoder.encode(e).real_rows()).collect();
    Ok(predict_labels(&model, bank.as_ref(), &inputs)
        .into_iter()
        .zip(&corpus.examples)
        .map(|((label, prob_claim), ex)| Prediction {
            id: ex.id.clone(),
            label,
            prob_claim,
        })
        .collect())
}

/// Majority vote over several checkpoints' predictions on the same rows.
pub fn vote_predictions(all: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    let labels: Vec<Vec<Label>> = all.iter().map(|p| p.iter().map(|x| x.label).collect()).collect();
    let voted = vote(&labels)?;
    Ok(voted
        .into_iter()
        .enumerate()
        .map(|(i, label)| Prediction {
            id: all[0][i].id.clone(),
            label,
            prob_claim: all.iter().map(|p| p[i].prob_claim).sum::<f64>() / all.len() as f64,
        })
        .collect())
}

pub fn model_config_summary(cfg: &ModelConfig, n_defs: (usize, usize)) -> Result<usize> {
    Ok(DesyrModel::new(cfg.clone(), n_defs.0, n_defs.1, 0)?.param_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"sampling\":\"5:2\""));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        cfg.validate_settings().unwrap();
        assert!(RunConfig { gammas: vec![], ..cfg.clone() }.validate_settings().is_err());
        assert!(RunConfig { epochs: 0, ..cfg.clone() }.validate_settings().is_err());
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>("{\"epochz\": 3}").is_err());
    }

    #[test]
    fn predictions_csv_roundtrip() {
        let p = vec![
            Prediction {
                id: "a".into(),
                label: Label::Claim,
                prob_claim: 0.75,
            },
            Prediction {
                id: "b,c".into(),
                label: Label::NonClaim,
                prob_claim: 0.1,
            },
        ];
        let bytes = predictions_to_csv(&p).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("id,label,prob_claim\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions(&path, &p).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), p);
        let gold = vec![("b,c".to_string(), Label::NonClaim), ("a".to_string(), Label::NonClaim)];
        let m = score_predictions(&p, &gold).unwrap();
        assert_eq!(m, f1_scores(&[Label::NonClaim, Label::Claim], &[Label::NonClaim, Label::NonClaim]).unwrap());
    }

    #[test]
    fn thread_cap() {
        let cfg = RunConfig {
            threads: Some(3),
            ..Default::default()
        };
        assert!(cfg.thread_count() >= 1 && cfg.thread_count() <= 3);
    }
}
