use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use desyr_core::dare::{self, DareConfig, DareTrainer, EmbeddingTable};
use desyr_core::data::{self, DatasetSchema, Encoder, LabeledCorpus, SamplingSpec};
use desyr_core::eval::{self, ClusterMetric, KMeansConfig};
use desyr_core::ingest::{parse_conllu_sentences, GraphOptions, HierarchyGraph};
use desyr_core::model::DefinitionBank;
use desyr_core::protocol::{self, Prediction, RunConfig};
use desyr_core::util::{read_to_string, write_atomic};
use desyr_core::{checkpoint::Checkpoint, toy, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "desyr", version, about = "DARE embeddings and DESYR claim detection")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Turn CoNLL-U dependency parses into a head/dependent edge list.
    ExtractEdges(ExtractEdges),
    /// Train Poincare embeddings on an edge list or CoNLL-U file.
    TrainDare(TrainDare),
    /// List the keys closest to a key in an embedding table.
    Nearest(Nearest),
    /// Run the full protocol: resample, split, train, vote.
    Train(Train),
    /// Predict with one checkpoint or every checkpoint of a run.
    Predict(Predict),
    /// Score a predictions CSV against gold labels.
    Evaluate(Evaluate),
    /// K-means over sentence vectors as an unsupervised baseline.
    ClusterBaseline(ClusterBaseline),
    /// Rebuild report.json for a finished run directory.
    Report(ReportCmd),
    /// Write the bundled toy corpus, schema and config.
    MakeToy(MakeToy),
    /// Print the parameter count of a run config's model.
    ParamsCount(ParamsCount),
}

#[derive(Args, Debug, Serialize)]
struct ExtractEdges {
    #[arg(long)]
    conllu: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop PUNCT tokens, reattaching their dependents.
    #[arg(long)]
    drop_punct: bool,
    /// Keep one copy of each repeated edge.
    #[arg(long)]
    dedupe: bool,
}

#[derive(Args, Debug, Serialize)]
struct DareOverrides {
    /// JSON file with DARE settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exclude_ancestors: bool,
}

impl DareOverrides {
    fn resolve(&self) -> Result<DareConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => DareConfig::default(),
        };
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.negatives {
            c.negatives_per_edge = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in_epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.exclude_ancestors {
            c.exclude_ancestors = true;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainDare {
    /// Edge list from `extract-edges`.
    #[arg(long, conflicts_with = "conllu", required_unless_present = "conllu")]
    edges: Option<PathBuf>,
    #[arg(long)]
    conllu: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    drop_punct: bool,
    #[command(flatten)]
    dare: DareOverrides,
}

#[derive(Args, Debug, Serialize)]
struct Nearest {
    #[arg(long)]
    embeddings: PathBuf,
    /// Key in `form.UPOS` form, e.g. `cat.NOUN`.
    #[arg(long)]
    key: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug, Serialize)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    splits: Option<usize>,
    /// Comma-separated focusing parameters, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// `org` or a majority:minority ratio such as `5:2`.
    #[arg(long)]
    sampling: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    pos_backoff: bool,
    /// Also train Org, [1:1] and [5:2] ensembles and write their table.
    #[arg(long)]
    sampling_sweep: bool,
}

#[derive(Args, Debug, Serialize)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// CoNLL-U parses keyed by example id.
    #[arg(long)]
    companion: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> Result<LabeledCorpus> {
        let schema = DatasetSchema::from_json_file(&self.schema)?;
        data::load_dataset(&self.dataset, &schema, self.companion.as_deref())
    }
}

#[derive(Args, Debug, Serialize)]
struct Predict {
    /// A single checkpoint file.
    #[arg(long, conflicts_with = "run_dir", required_unless_present = "run_dir")]
    checkpoint: Option<PathBuf>,
    /// Every checkpoint of a run, combined by majority vote.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Embedding table; defaults to the run's own table when it trained one.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    /// Write the encoded input matrices and masks as text.
    #[arg(long)]
    dump_encoded: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct Evaluate {
    #[arg(long)]
    pred: PathBuf,
    /// CSV with `id,label` columns.
    #[arg(long)]
    gold: PathBuf,
    /// Write the metrics as JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ClusterBaseline {
    #[arg(long)]
    embeddings: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    /// Separate test file; without it a stratified share is held out.
    #[arg(long)]
    test_dataset: Option<PathBuf>,
    #[arg(long)]
    test_companion: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Fit on train and test together.
    #[arg(long)]
    joint: bool,
    /// Frechet mean of token vectors instead of the retracted Euclidean mean.
    #[arg(long)]
    hyperbolic_mean: bool,
    /// Hyperbolic assignment distance with medoid centroids.
    #[arg(long)]
    poincare_metric: bool,
    #[arg(long)]
    pos_backoff: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReportCmd {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MakeToy {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ParamsCount {
    #[arg(long)]
    config: PathBuf,
}

/// Input problems exit 2, everything else 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::Parse { .. } | Error::Format { .. } | Error::Structural(_) => 2,
        _ => 1,
    }
}

fn write_meta<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    let meta = serde_json::json!({ "command": command, "config": config });
    write_atomic(Path::new(&name), serde_json::to_string_pretty(&meta)?.as_bytes())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::Invalid(format!("{}: {e}", p.display()))),
        _ => Ok(()),
    }
}

fn extract_edges(a: &ExtractEdges) -> Result<()> {
    let text = read_to_string(&a.conllu)?;
    let sentences = parse_conllu_sentences(&text)?;
    let opts = GraphOptions {
        drop_punct: a.drop_punct,
        dedupe: a.dedupe,
    };
    let graph = HierarchyGraph::from_sentences(sentences.iter().map(|s| &s.tokens), opts)?;
    ensure_parent(&a.out)?;
    graph.save_edge_list(&a.out)?;
    write_meta(&a.out, "extract-edges", a)?;
    println!("sentences {} nodes {} edges {}", sentences.len(), graph.node_keys.len(), graph.edges.len());
    Ok(())
}

fn train_dare(a: &TrainDare) -> Result<()> {
    let cfg = a.dare.resolve()?;
    let graph = match (&a.edges, &a.conllu) {
        (Some(p), _) => HierarchyGraph::load_edge_list(p)?,
        (None, Some(p)) => {
            let sentences = parse_conllu_sentences(&read_to_string(p)?)?;
            let opts = GraphOptions {
                drop_punct: a.drop_punct,
                dedupe: false,
            };
            HierarchyGraph::from_sentences(sentences.iter().map(|s| &s.tokens), opts)?
        }
        (None, None) => return Err(Error::Config("give --edges or --conllu".into())),
    };
    let mut trainer = DareTrainer::new(&graph, cfg.clone())?;
    for _ in 0..cfg.epochs {
        let loss = trainer.run_epoch()?;
        log::info!("epoch {} mean loss {loss:.5}", trainer.epochs_done());
    }
    let rank = dare::mean_reconstruction_rank(trainer.table(), trainer.graph());
    let table = trainer.into_table();
    ensure_parent(&a.out)?;
    dare::save_embeddings(&table, &a.out)?;
    write_meta(&a.out, "train-dare", &serde_json::json!({ "args": a, "resolved": cfg }))?;
    println!("nodes {} dim {} mean rank {rank:.3}", table.len(), table.dim());
    Ok(())
}

fn nearest(a: &Nearest) -> Result<()> {
    let table = dare::load_embeddings(&a.embeddings)?;
    for (key, d) in dare::nearest(&table, &a.key, a.k)? {
        println!("{key}\t{d:.6}");
    }
    Ok(())
}

fn train(a: &Train) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.splits {
        cfg.splits = v;
    }
    if let Some(v) = &a.gammas {
        cfg.gammas = v.clone();
    }
    if let Some(v) = &a.sampling {
        cfg.sampling = v.parse::<SamplingSpec>()?;
    }
    if let Some(v) = a.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = &a.embeddings {
        cfg.embeddings = Some(v.clone());
    }
    if a.pos_backoff {
        cfg.pos_backoff = true;
    }
    cfg.validate()?;
    let prep = protocol::prepare(&cfg)?;
    let outcome = protocol::run_ensemble(&cfg, &prep)?;
    let report = protocol::write_run(&a.run_dir, &cfg, &prep, &outcome)?;
    print!("{}", report.table());
    println!("checkpoints {} run {}", report.members.len(), a.run_dir.display());
    if a.sampling_sweep {
        let specs = ["org", "1:1", "5:2"].map(|s| s.parse::<SamplingSpec>().expect("literal spec"));
        let (rows, table) = protocol::sampling_sweep(&cfg, &prep, &specs)?;
        write_atomic(&a.run_dir.join("sampling_sweep.txt"), table.as_bytes())?;
        write_atomic(
            &a.run_dir.join("sampling_sweep.json"),
            serde_json::to_string_pretty(&rows)?.as_bytes(),
        )?;
        print!("{table}");
    }
    Ok(())
}

fn run_table(run_dir: &Path, explicit: Option<&PathBuf>) -> Result<EmbeddingTable> {
    if let Some(p) = explicit {
        return dare::load_embeddings(p);
    }
    let own = run_dir.join(protocol::EMBEDDINGS_FILE);
    if own.exists() {
        return dare::load_embeddings(&own);
    }
    let cfg: RunConfig = serde_json::from_str(&read_to_string(&run_dir.join(protocol::CONFIG_FILE))?)?;
    match cfg.embeddings {
        Some(p) => dare::load_embeddings(&p),
        None => Err(Error::Config("no embedding table found; pass --embeddings".into())),
    }
}

fn predict(a: &Predict) -> Result<()> {
    let corpus = a.data.load()?;
    let (checkpoints, table) = match (&a.checkpoint, &a.run_dir) {
        (Some(c), _) => {
            let table = match &a.embeddings {
                Some(p) => dare::load_embeddings(p)?,
                None => return Err(Error::Config("--embeddings is required with --checkpoint".into())),
            };
            (vec![c.clone()], table)
        }
        (None, Some(dir)) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.join("checkpoints"))
                .map_err(|e| Error::Invalid(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Invalid(format!("no checkpoints under {}", dir.display())));
            }
            (paths, run_table(dir, a.embeddings.as_ref())?)
        }
        (None, None) => return Err(Error::Config("give --checkpoint or --run-dir".into())),
    };
    let mut all: Vec<Vec<Prediction>> = Vec::new();
    let mut first: Option<Checkpoint> = None;
    for p in &checkpoints {
        let ck = Checkpoint::load(p)?;
        all.push(protocol::predict_with_checkpoint(&ck, &table, &corpus)?);
        first.get_or_insert(ck);
    }
    let preds = if all.len() == 1 {
        all.pop().expect("one checkpoint")
    } else {
        protocol::vote_predictions(&all)?
    };
    ensure_parent(&a.out)?;
    protocol::write_predictions(&a.out, &preds)?;
    write_meta(&a.out, "predict", a)?;
    if let (Some(dump), Some(ck)) = (&a.dump_encoded, &first) {
        let enc = Encoder::new(&ck.vocab, &table, ck.max_len, ck.pos_backoff);
        let mut text = String::new();
        for ex in &corpus.examples {
            text.push_str(&format!("# id = {}\n", ex.id));
            text.push_str(&enc.encode(ex).to_debug_string());
            text.push('\n');
        }
        write_atomic(dump, text.as_bytes())?;
    }
    let claims = preds.iter().filter(|p| p.label == data::Label::Claim).count();
    println!("predicted {} rows ({claims} claims) from {} checkpoint(s)", preds.len(), checkpoints.len());
    Ok(())
}

fn evaluate(a: &Evaluate) -> Result<()> {
    let preds = protocol::read_predictions(&a.pred)?;
    let gold = protocol::read_gold(&a.gold)?;
    let m = protocol::score_predictions(&preds, &gold)?;
    print!("{}", eval::format_table(&[("predictions".into(), m.clone())]));
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_atomic(out, serde_json::to_string_pretty(&m)?.as_bytes())?;
        write_meta(out, "evaluate", a)?;
    }
    Ok(())
}

fn cluster_baseline(a: &ClusterBaseline) -> Result<()> {
    let table = dare::load_embeddings(&a.embeddings)?;
    let corpus = a.data.load()?;
    let (train, test) = match &a.test_dataset {
        Some(p) => {
            let schema = DatasetSchema::from_json_file(&a.data.schema)?;
            (corpus, data::load_dataset(p, &schema, a.test_companion.as_deref())?)
        }
        None => data::split(&corpus, desyr_core::util::derive_seed(a.seed, 0x7e57), 1, a.test_fraction)?
            .pop()
            .expect("one split"),
    };
    let vocab = data::corpus_vocab(&train, usize::MAX)?;
    let tv = eval::corpus_vectors(&train, &vocab, &table, a.pos_backoff, a.hyperbolic_mean);
    let sv = eval::corpus_vectors(&test, &vocab, &table, a.pos_backoff, a.hyperbolic_mean);
    let cfg = KMeansConfig {
        seed: a.seed,
        metric: if a.poincare_metric {
            ClusterMetric::Poincare
        } else {
            ClusterMetric::Euclidean
        },
        ..Default::default()
    };
    let r = eval::cluster_eval(&tv, &train.labels(), &sv, &test.labels(), &cfg, a.joint)?;
    if r.degenerate {
        log::warn!("clustering was degenerate (fewer distinct vectors than clusters)");
    }
    print!("{}", eval::format_table(&[("K-means".into(), r.metrics.clone())]));
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        let body = serde_json::json!({ "metrics": r.metrics, "mapping": r.mapping, "degenerate": r.degenerate });
        write_atomic(out, serde_json::to_string_pretty(&body)?.as_bytes())?;
        write_meta(out, "cluster-baseline", a)?;
    }
    Ok(())
}

fn report(a: &ReportCmd) -> Result<()> {
    let r = eval::report(&a.run_dir)?;
    print!("{}", r.table());
    Ok(())
}

fn make_toy(a: &MakeToy) -> Result<()> {
    toy::write_toy(&a.out)?;
    println!("wrote toy corpus to {}", a.out.display());
    Ok(())
}

fn params_count(a: &ParamsCount) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    cfg.validate_settings()?;
    let defs = if cfg.model.use_dnet {
        let bank = match &cfg.definitions {
            Some(p) => DefinitionBank::load(p)?,
            None => DefinitionBank::bundled(),
        };
        (bank.claim.len(), bank.nonclaim.len())
    } else {
        (0, 0)
    };
    println!("{}", protocol::model_config_summary(&cfg.model, defs)?);
    Ok(())
}

fn diagnostics_dir(cmd: &Command) -> PathBuf {
    let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    match cmd {
        Command::ExtractEdges(a) => parent(&a.out),
        Command::TrainDare(a) => parent(&a.out),
        Command::Train(a) => a.run_dir.clone(),
        Command::Predict(a) => parent(&a.out),
        Command::ClusterBaseline(a) => a.out.as_deref().map(parent).unwrap_or_default(),
        Command::Report(a) => a.run_dir.clone(),
        Command::MakeToy(a) => a.out.clone(),
        _ => PathBuf::new(),
    }
}

fn write_diagnostics(cmd: &Command, err: &Error) {
    let dir = diagnostics_dir(cmd);
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    let mut chain = Vec::new();
    let mut src: Option<&dyn std::error::Error> = Some(err);
    while let Some(e) = src {
        chain.push(e.to_string());
        src = e.source();
    }
    let body = serde_json::json!({
        "error": err.to_string(),
        "chain": chain,
        "debug": format!("{err:?}"),
        "command": cmd,
        "args": std::env::args().collect::<Vec<_>>(),
    });
    let path = dir.join("desyr-diagnostics.json");
    if std::fs::create_dir_all(&dir).is_ok() {
        if let Ok(text) = serde_json::to_string_pretty(&body) {
            if write_atomic(&path, text.as_bytes()).is_ok() {
                eprintln!("diagnostics written to {}", path.display());
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::ExtractEdges(a) => extract_edges(a),
        Command::TrainDare(a) => train_dare(a),
        Command::Nearest(a) => nearest(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ClusterBaseline(a) => cluster_baseline(a),
        Command::Report(a) => report(a),
        Command::MakeToy(a) => make_toy(a),
        Command::ParamsCount(a) => params_count(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == 1 {
                write_diagnostics(&cli.command, &e);
            }
            ExitCode::from(code)
        }
    }
}
