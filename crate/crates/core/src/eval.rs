//! Classification metrics, the K-means embedding baseline, and run reports.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dare::EmbeddingTable;
use crate::data::{Encoder, Label, LabeledCorpus};
use crate::ingest::Vocab;
use crate::poincare::{distance_grad, distance_unchecked, norm_sq, project_in_place, riemannian_rescale};
use crate::util::{derive_seed, seeded};
use crate::{Error, Result};

/// Confusion counts from the point of view of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub c_f1: f64,
    pub nc_f1: f64,
    pub m_f1: f64,
    pub w_f1: f64,
    pub claim: ClassCounts,
    pub nonclaim: ClassCounts,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        let total = self.claim.tp + self.claim.fp + self.claim.fn_ + self.claim.tn;
        ratio(self.claim.tp + self.claim.tn, total)
    }
}

/// Per-class, macro and support-weighted F1. Undefined ratios count as 0.
pub fn f1_scores(pred: &[Label], gold: &[Label]) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("cannot score an empty label set".into()));
    }
    let counts = |class: Label| {
        let mut c = ClassCounts::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == class, g == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    };
    let claim = counts(Label::Claim);
    let nonclaim = counts(Label::NonClaim);
    let (c_f1, nc_f1) = (claim.f1(), nonclaim.f1());
    let n = gold.len() as f64;
    let w_f1 = (c_f1 * claim.support() as f64 + nc_f1 * nonclaim.support() as f64) / n;
    Ok(Metrics {
        c_f1,
        nc_f1,
        m_f1: (c_f1 + nc_f1) / 2.0,
        w_f1,
        claim,
        nonclaim,
    })
}

/// Render rows in the column order c-F1, nc-F1, m-F1, w-F1.
pub fn format_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", "Model", "c-F1", "nc-F1", "m-F1", "w-F1");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}",
            name, m.c_f1, m.nc_f1, m.m_f1, m.w_f1
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMetric {
    /// Squared Euclidean distance with mean centroids.
    #[default]
    Euclidean,
    /// Hyperbolic distance with medoid centroids.
    Poincare,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub metric: ClusterMetric,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            max_iters: 300,
            restarts: 10,
            seed: 0,
            metric: ClusterMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub degenerate: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }

    pub fn nearest(&self, v: &[f64], metric: ClusterMetric) -> usize {
        nearest_centroid(v, &self.centroids, metric).0
    }
}

fn point_cost(a: &[f64], b: &[f64], metric: ClusterMetric) -> f64 {
    match metric {
        ClusterMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        ClusterMetric::Poincare => distance_unchecked(a, b),
    }
}

fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>], metric: ClusterMetric) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = point_cost(v, c, metric);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of point-to-assigned-centroid costs.
pub fn inertia(vectors: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>], metric: ClusterMetric) -> f64 {
    vectors
        .iter()
        .zip(assignments)
        .map(|(v, &a)| point_cost(v, &centroids[a], metric))
        .sum()
}

/// Centroid of a non-empty member set under `metric`.
fn centroid(members: &[&Vec<f64>], metric: ClusterMetric) -> Vec<f64> {
    match metric {
        ClusterMetric::Euclidean => {
            let mut c = vec![0.0; members[0].len()];
            for m in members {
                for (a, b) in c.iter_mut().zip(m.iter()) {
                    *a += b;
                }
            }
            c.iter_mut().for_each(|a| *a /= members.len() as f64);
            c
        }
        ClusterMetric::Poincare => {
            let cost = |c: &Vec<f64>| members.iter().map(|m| distance_unchecked(c, m)).sum::<f64>();
            let mut best = members[0];
            let mut best_cost = cost(best);
            for m in &members[1..] {
                let c = cost(m);
                if c < best_cost {
                    best = m;
                    best_cost = c;
                }
            }
            best.clone()
        }
    }
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, metric: ClusterMetric, rng: &mut crate::util::Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                let d = nearest_centroid(p, &centroids, metric).1;
                match metric {
                    ClusterMetric::Euclidean => d,
                    ClusterMetric::Poincare => d * d,
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> KMeansResult {
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest_centroid(p, &centroids, cfg.metric);
            total += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        history.push(total);
        if !changed {
            break;
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| p)
                .collect();
            // an emptied cluster keeps its previous centroid
            if !members.is_empty() {
                *c = centroid(&members, cfg.metric);
            }
        }
    }
    debug_assert_eq!(centroids.len(), k);
    if cfg.metric == ClusterMetric::Euclidean {
        hartigan(points, &mut assignments, &mut centroids, &mut history);
    }
    KMeansResult {
        assignments,
        centroids,
        inertia_history: history,
        degenerate: false,
    }
}

/// Single-point moves that strictly lower the squared-error objective,
/// applied after Lloyd converges. Each move updates both means exactly.
fn hartigan(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>], history: &mut Vec<f64>) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    for _ in 0..100 {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = assignments[i];
            if sizes[from] < 2 {
                continue;
            }
            let nf = sizes[from] as f64;
            let removal = nf / (nf - 1.0) * sq(p, &centroids[from]);
            let mut best = (from, 0.0);
            for to in (0..k).filter(|&j| j != from) {
                let nt = sizes[to] as f64;
                let delta = nt / (nt + 1.0) * sq(p, &centroids[to]) - removal;
                if delta < best.1 - 1e-12 {
                    best = (to, delta);
                }
            }
            let to = best.0;
            if to == from {
                continue;
            }
            let (nf, nt) = (sizes[from] as f64, sizes[to] as f64);
            for d in 0..p.len() {
                centroids[from][d] = (centroids[from][d] * nf - p[d]) / (nf - 1.0);
                centroids[to][d] = (centroids[to][d] * nt + p[d]) / (nt + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            assignments[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
        history.push(inertia(points, assignments, centroids, ClusterMetric::Euclidean));
    }
}

/// Inputs with at most this many k-subsets of distinct points are also
/// seeded from every subset.
const EXHAUSTIVE_SEEDINGS: usize = 64;

fn k_subsets(n: usize, k: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    let mut count: usize = 1;
    for i in 0..k {
        count = count.checked_mul(n - i)? / (i + 1);
        if count > limit {
            return None;
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return Some(out);
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding and several restarts; the
/// restart with the lowest final objective wins. Small inputs are also
/// seeded from every k-subset of distinct points. In Euclidean mode Lloyd is
/// followed by a Hartigan single-point refinement. Points are processed in a
/// canonical order, so permuting the input permutes the output and nothing
/// else.
pub fn kmeans_cluster(vectors: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if vectors.is_empty() {
        return Err(Error::Invalid("no vectors to cluster".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("vectors of differing dimension".into()));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite coordinate in clustering input".into()));
    }

    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        vectors[a]
            .iter()
            .zip(&vectors[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let points: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].clone()).collect();
    let distinct = 1 + points.windows(2).filter(|w| w[0] != w[1]).count();

    let canonical = if distinct < cfg.k {
        log::warn!("only {distinct} distinct vectors for k = {}; clustering is degenerate", cfg.k);
        let centroids = vec![points[0].clone(); 1];
        KMeansResult {
            assignments: vec![0; points.len()],
            inertia_history: vec![inertia(&points, &vec![0; points.len()], &centroids, cfg.metric)],
            centroids,
            degenerate: true,
        }
    } else {
        let mut inits: Vec<Vec<Vec<f64>>> = (0..cfg.restarts.max(1))
            .map(|r| {
                let mut rng = seeded(derive_seed(cfg.seed, r as u64));
                plus_plus_init(&points, cfg.k, cfg.metric, &mut rng)
            })
            .collect();
        let mut uniq = points.clone();
        uniq.dedup();
        if let Some(subsets) = k_subsets(uniq.len(), cfg.k, EXHAUSTIVE_SEEDINGS) {
            inits.extend(subsets.into_iter().map(|s| s.iter().map(|&i| uniq[i].clone()).collect()));
        }
        let mut best: Option<KMeansResult> = None;
        for init in inits {
            let run = lloyd(&points, init, cfg);
            if best.as_ref().is_none_or(|b| run.inertia() < b.inertia() - 1e-12) {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    };

    let mut assignments = vec![0; vectors.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = canonical.assignments[pos];
    }
    Ok(KMeansResult {
        assignments,
        ..canonical
    })
}

/// Mean of token vectors retracted into the ball. With `hyperbolic`, the
/// Euclidean mean seeds a Riemannian descent on the sum of squared
/// hyperbolic distances.
pub fn sentence_vector(tokens: &[Vec<f64>], dim: usize, eps_ball: f64, hyperbolic: bool) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    if tokens.is_empty() {
        return m;
    }
    for t in tokens {
        for (a, b) in m.iter_mut().zip(t) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= tokens.len() as f64);
    let _ = project_in_place(&mut m, eps_ball);
    if hyperbolic && tokens.len() > 1 {
        let n = tokens.len() as f64;
        for _ in 0..200 {
            let mut grad = vec![0.0; dim];
            for t in tokens {
                let d = distance_unchecked(&m, t);
                if d == 0.0 {
                    continue;
                }
                let (gx, _) = distance_grad(&m, t);
                for (g, v) in grad.iter_mut().zip(gx) {
                    *g += 2.0 * d * v / n;
                }
            }
            let step = riemannian_rescale(&grad, &m);
            for (a, s) in m.iter_mut().zip(&step) {
                *a -= 0.5 * s;
            }
            let _ = project_in_place(&mut m, eps_ball);
            if norm_sq(&step) < 1e-24 {
                break;
            }
        }
    }
    m
}

/// Sentence vectors for every example of a corpus.
pub fn corpus_vectors(corpus: &LabeledCorpus, vocab: &Vocab, table: &EmbeddingTable, pos_backoff: bool, hyperbolic: bool) -> Vec<Vec<f64>> {
    let enc = Encoder::new(vocab, table, usize::MAX, pos_backoff);
    corpus
        .examples
        .iter()
        .map(|ex| {
            let toks: Vec<Vec<f64>> = ex.tokens.iter().map(|t| enc.token_vector(t, false)).collect();
            sentence_vector(&toks, table.dim(), table.eps_ball(), hyperbolic)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEval {
    pub metrics: Metrics,
    /// Label assigned to each cluster.
    pub mapping: Vec<Label>,
    pub predictions: Vec<Label>,
    pub degenerate: bool,
}

/// Fit K-means (train-only, or train and test jointly with `joint`), name
/// each cluster after its majority train label and score the test points.
pub fn cluster_eval(
    train_vecs: &[Vec<f64>],
    train_labels: &[Label],
    test_vecs: &[Vec<f64>],
    test_labels: &[Label],
    cfg: &KMeansConfig,
    joint: bool,
) -> Result<ClusterEval> {
    if train_vecs.len() != train_labels.len() || test_vecs.len() != test_labels.len() {
        return Err(Error::Shape("vector and label counts differ".into()));
    }
    let fit_on: Vec<Vec<f64>> = if joint {
        train_vecs.iter().chain(test_vecs).cloned().collect()
    } else {
        train_vecs.to_vec()
    };
    let km = kmeans_cluster(&fit_on, cfg)?;
    let k = km.centroids.len();
    let mut votes = vec![[0usize; 2]; k];
    for (a, l) in km.assignments.iter().zip(train_labels) {
        votes[*a][l.index()] += 1;
    }
    let overall = {
        let claims = train_labels.iter().filter(|l| **l == Label::Claim).count();
        if 2 * claims >= train_labels.len() {
            Label::Claim
        } else {
            Label::NonClaim
        }
    };
    let mapping: Vec<Label> = votes
        .iter()
        .map(|v| match v[Label::Claim.index()].cmp(&v[Label::NonClaim.index()]) {
            std::cmp::Ordering::Greater => Label::Claim,
            std::cmp::Ordering::Less => Label::NonClaim,
            std::cmp::Ordering::Equal => overall,
        })
        .collect();
    let predictions: Vec<Label> = if joint {
        km.assignments[train_vecs.len()..].iter().map(|&a| mapping[a]).collect()
    } else {
        test_vecs.iter().map(|v| mapping[km.nearest(v, cfg.metric)]).collect()
    };
    Ok(ClusterEval {
        metrics: f1_scores(&predictions, test_labels)?,
        mapping,
        predictions,
        degenerate: km.degenerate,
    })
}

pub const REPORT_FORMAT: &str = "desyr-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub split: usize,
    pub gamma: f64,
    pub seed: u64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub val_m_f1: f64,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub members: Vec<MemberReport>,
    pub voted: Metrics,
    pub param_count: usize,
    pub wall_time_secs: f64,
    pub created_unix: u64,
}

impl RunReport {
    /// Check structural invariants of a report.
    pub fn validate(&self) -> Result<()> {
        if self.format != REPORT_FORMAT {
            return Err(Error::Report(format!("unknown report format {:?}", self.format)));
        }
        if self.config_hash.len() != 64 || !self.config_hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Report("config_hash is not a sha256 hex digest".into()));
        }
        if self.members.is_empty() {
            return Err(Error::Report("report has no ensemble members".into()));
        }
        for m in self.members.iter().map(|m| &m.test).chain([&self.voted]) {
            for v in [m.c_f1, m.nc_f1, m.m_f1, m.w_f1] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Report(format!("metric {v} outside [0, 1]")));
                }
            }
            if (m.m_f1 - (m.c_f1 + m.nc_f1) / 2.0).abs() > 1e-12 {
                return Err(Error::Report("m_f1 is not the mean of class F1s".into()));
            }
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut rows: Vec<(String, Metrics)> = self
            .members
            .iter()
            .map(|m| (format!("split{} gamma={}", m.split, m.gamma), m.test.clone()))
            .collect();
        rows.push(("voted".into(), self.voted.clone()));
        format_table(&rows)
    }
}

/// sha256 of the compact JSON encoding of a config value.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(&serde_json::to_value(config)?)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Assemble `report.json` from a completed run directory.
pub fn report(run_dir: &Path) -> Result<RunReport> {
    let summary_path = run_dir.join(crate::protocol::SUMMARY_FILE);
    let config_path = run_dir.join(crate::protocol::CONFIG_FILE);
    for p in [&summary_path, &config_path] {
        if !p.exists() {
            return Err(Error::Report(format!("missing run artifact {}", p.display())));
        }
    }
    let summary: crate::protocol::RunSummary = serde_json::from_str(&crate::util::read_to_string(&summary_path)?)?;
    let config: serde_json::Value = serde_json::from_str(&crate::util::read_to_string(&config_path)?)?;
    for m in &summary.members {
        let ckpt = run_dir.join(crate::protocol::checkpoint_name(m.split, m.gamma));
        if !ckpt.exists() {
            return Err(Error::Report(format!("missing checkpoint {}", ckpt.display())));
        }
    }
    let rep = RunReport {
        format: REPORT_FORMAT.into(),
        config_hash: config_hash(&config)?,
        seeds: summary.seeds.clone(),
        members: summary.members.clone(),
        voted: summary.voted.clone(),
        param_count: summary.param_count,
        wall_time_secs: summary.wall_time_secs,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    rep.validate()?;
    crate::util::write_atomic(&run_dir.join(crate::protocol::REPORT_FILE), serde_json::to_string_pretty(&rep)?.as_bytes())?;
    Ok(rep)
}
