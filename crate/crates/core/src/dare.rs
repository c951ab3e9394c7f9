//! Dependency-hierarchy Poincare embeddings trained with negative sampling
//! and Riemannian SGD.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ingest::HierarchyGraph;
use crate::poincare::{
    distance_grad, distance_unchecked, norm_sq, project_in_place, riemannian_rescale,
    DEFAULT_EPS_BALL,
};
use crate::util::{read_to_string, seeded, write_atomic, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DareConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_edge: usize,
    pub burn_in_epochs: usize,
    pub burn_in_lr_scale: f64,
    pub init_range: f64,
    pub eps_ball: f64,
    pub seed: u64,
    /// Also exclude every ancestor of `x` from its negative candidates.
    pub exclude_ancestors: bool,
}

impl Default for DareConfig {
    fn default() -> Self {
        DareConfig {
            dim: 100,
            epochs: 50,
            learning_rate: 0.1,
            negatives_per_edge: 10,
            burn_in_epochs: 10,
            burn_in_lr_scale: 0.1,
            init_range: 1e-3,
            eps_ball: DEFAULT_EPS_BALL,
            seed: 0,
            exclude_ancestors: false,
        }
    }
}

impl DareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.negatives_per_edge < 1 {
            return Err(Error::Config("negatives_per_edge must be >= 1".into()));
        }
        if !(self.init_range > 0.0 && self.init_range <= 1e-3) {
            return Err(Error::Config(format!(
                "init_range must be in (0, 1e-3], got {}",
                self.init_range
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.eps_ball > 0.0 && self.eps_ball < 0.1) {
            return Err(Error::Config("eps_ball must be in (0, 0.1)".into()));
        }
        Ok(())
    }
}

/// Metadata carried alongside the vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub dim: usize,
    pub count: usize,
    pub eps_ball: f64,
    pub trained_epochs: usize,
}

/// Map from node keys to points in the ball, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    eps_ball: f64,
    trained_epochs: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize, eps_ball: f64) -> Self {
        EmbeddingTable {
            dim,
            keys: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            eps_ball,
            trained_epochs: 0,
        }
    }

    /// Insert or overwrite a vector, retracting it into the ball.
    pub fn insert(&mut self, key: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {key} has dim {}, table dim {}",
                vector.len(),
                self.dim
            )));
        }
        let mut v = vector.to_vec();
        project_in_place(&mut v, self.eps_ball)?;
        match self.index.get(key) {
            Some(&i) => self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(&v),
            None => {
                self.index.insert(key.to_string(), self.keys.len());
                self.keys.push(key.to_string());
                self.data.extend_from_slice(&v);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn eps_ball(&self) -> f64 {
        self.eps_ball
    }

    pub fn meta(&self) -> TableMeta {
        TableMeta {
            dim: self.dim,
            count: self.len(),
            eps_ball: self.eps_ball,
            trained_epochs: self.trained_epochs,
        }
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.keys
            .iter()
            .enumerate()
            .map(move |(i, k)| (k.as_str(), self.row(i)))
    }

    /// Component-wise mean of all vectors, retracted into the ball.
    pub fn mean_vector(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        if self.is_empty() {
            return m;
        }
        for i in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        let _ = project_in_place(&mut m, self.eps_ball);
        m
    }

    /// Largest vector norm in the table.
    pub fn max_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| norm_sq(self.row(i)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        let x = self.get(a).ok_or_else(|| Error::Lookup(a.to_string()))?;
        let y = self.get(b).ok_or_else(|| Error::Lookup(b.to_string()))?;
        Ok(distance_unchecked(x, y))
    }

    /// Serialise to the `count dim` / `key v1 .. vD` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * (self.dim * 16 + 16));
        let _ = writeln!(s, "{} {}", self.len(), self.dim);
        for (k, v) in self.iter() {
            s.push_str(k);
            for x in v {
                let _ = write!(s, " {x:.8e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, eps_ball: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Format {
            line: 1,
            message: "missing `count dim` header".into(),
        })?;
        let mut h = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or(Error::Format {
                line: 1,
                message: format!("bad header {header:?}"),
            })
        };
        let count = parse_usize(h.next())?;
        let dim = parse_usize(h.next())?;
        if h.next().is_some() || dim == 0 {
            return Err(Error::Format {
                line: 1,
                message: format!("bad header {header:?}"),
            });
        }
        let mut table = EmbeddingTable::new(dim, eps_ball);
        for (i, line) in lines {
            let line_no = i + 1;
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    line: line_no,
                    message: format!("bad float: {e}"),
                })?;
            if vals.len() != dim {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", vals.len()),
                });
            }
            if table.contains(key) {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("duplicate key {key}"),
                });
            }
            let n = norm_sq(&vals).sqrt();
            if n >= 1.0 - eps_ball {
                log::warn!("line {line_no}: {key} has norm {n:.6}, retracting into the ball");
            }
            table.insert(key, &vals).map_err(|e| Error::Format {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        if table.len() != count {
            return Err(Error::Format {
                line: 1,
                message: format!("header promises {count} rows, found {}", table.len()),
            });
        }
        Ok(table)
    }
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    write_atomic(path, table.to_text().as_bytes())
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::from_text(&read_to_string(path)?, DEFAULT_EPS_BALL)
}

/// `k` nearest keys by hyperbolic distance, ascending, excluding `key`.
pub fn nearest(table: &EmbeddingTable, key: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = table.get(key).ok_or_else(|| Error::Lookup(key.to_string()))?;
    let mut out: Vec<(String, f64)> = table
        .iter()
        .filter(|(other, _)| *other != key)
        .map(|(other, v)| (other.to_string(), distance_unchecked(q, v)))
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(out)
}

/// Integer-indexed view of a hierarchy for training.
#[derive(Debug, Clone)]
pub struct DareGraph {
    keys: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    /// Keys that may not be drawn as negatives for each node.
    excluded: Vec<HashSet<usize>>,
}

impl DareGraph {
    pub fn new(graph: &HierarchyGraph, exclude_ancestors: bool) -> Self {
        let keys: Vec<String> = graph.node_keys.iter().cloned().collect();
        let index: HashMap<String, usize> =
            keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        let edges: Vec<(usize, usize)> = graph
            .edges
            .iter()
            .map(|e| (index[&e.parent], index[&e.child]))
            .collect();
        let n = keys.len();
        let mut excluded: Vec<HashSet<usize>> = (0..n).map(|i| HashSet::from([i])).collect();
        for &(p, c) in &edges {
            excluded[p].insert(c);
        }
        if exclude_ancestors {
            let mut parents: Vec<HashSet<usize>> = vec![HashSet::new(); n];
            for &(p, c) in &edges {
                parents[c].insert(p);
            }
            for (x, ex) in excluded.iter_mut().enumerate() {
                let mut stack: Vec<usize> = parents[x].iter().copied().collect();
                let mut seen = HashSet::new();
                while let Some(a) = stack.pop() {
                    if seen.insert(a) {
                        ex.insert(a);
                        stack.extend(parents[a].iter().copied());
                    }
                }
            }
        }
        DareGraph {
            keys,
            index,
            edges,
            excluded,
        }
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn is_excluded(&self, x: usize, y: usize) -> bool {
        self.excluded[x].contains(&y)
    }

    fn candidate_count(&self, x: usize) -> usize {
        self.keys.len() - self.excluded[x].len()
    }

    fn sample_indices(&self, x: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let available = self.candidate_count(x);
        if available < k {
            return Err(Error::Sampling(format!(
                "{} has {available} non-associated keys, {k} requested",
                self.keys[x]
            )));
        }
        let n = self.keys.len();
        let mut out = Vec::with_capacity(k);
        // Rejection sampling is cheap when candidates are plentiful.
        if available * 2 >= n {
            let mut picked = HashSet::with_capacity(k);
            while out.len() < k {
                let c = rng.gen_range(0..n);
                if !self.excluded[x].contains(&c) && picked.insert(c) {
                    out.push(c);
                }
            }
        } else {
            let mut pool: Vec<usize> = (0..n).filter(|c| !self.excluded[x].contains(c)).collect();
            let (chosen, _) = pool.partial_shuffle(rng, k);
            out.extend_from_slice(chosen);
        }
        Ok(out)
    }
}

/// Draw `k` distinct keys that are neither `x` nor excluded for `x`.
pub fn negative_sample(x: &str, k: usize, graph: &DareGraph, rng: &mut Rng) -> Result<Vec<String>> {
    let xi = graph.index_of(x).ok_or_else(|| Error::Lookup(x.to_string()))?;
    Ok(graph
        .sample_indices(xi, k, rng)?
        .into_iter()
        .map(|i| graph.keys[i].clone())
        .collect())
}

/// Softmax negative log-likelihood of `y` against `negatives` for anchor `x`.
pub fn edge_loss(x: &str, y: &str, negatives: &[String], table: &EmbeddingTable) -> Result<f64> {
    let lookup = |k: &str| table.index_of(k).ok_or_else(|| Error::Lookup(k.to_string()));
    let xi = lookup(x)?;
    let yi = lookup(y)?;
    let negs = negatives
        .iter()
        .map(|k| lookup(k))
        .collect::<Result<Vec<_>>>()?;
    Ok(edge_loss_indexed(table, xi, yi, &negs).0)
}

/// Edge loss with its Euclidean gradients: one for the anchor, then one per
/// target (the positive first, then each negative in order).
pub fn edge_loss_gradient(x: &str, y: &str, negatives: &[String], table: &EmbeddingTable) -> Result<EdgeGrad> {
    let lookup = |k: &str| table.index_of(k).ok_or_else(|| Error::Lookup(k.to_string()));
    let xi = lookup(x)?;
    let targets = std::iter::once(y)
        .chain(negatives.iter().map(String::as_str))
        .map(lookup)
        .collect::<Result<Vec<_>>>()?;
    Ok(edge_loss_grad(table, xi, &targets))
}

/// Loss and Euclidean gradients for anchor, positive, and each negative.
#[derive(Debug, Clone)]
pub struct EdgeGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
}

fn edge_loss_indexed(table: &EmbeddingTable, x: usize, y: usize, negs: &[usize]) -> (f64, Vec<f64>) {
    let xv = table.row(x);
    let dists: Vec<f64> = std::iter::once(y)
        .chain(negs.iter().copied())
        .map(|t| distance_unchecked(xv, table.row(t)))
        .collect();
    let (loss, weights) = softmax_nll(&dists);
    (loss, weights)
}

/// `d_0 + ln sum_j exp(-d_j)` and the softmax weights over `-d`.
fn softmax_nll(dists: &[f64]) -> (f64, Vec<f64>) {
    let m = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = dists.iter().map(|d| (m - d).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = dists[0] - m + z.ln();
    (loss, exps.iter().map(|e| e / z).collect())
}

fn edge_loss_grad(table: &EmbeddingTable, x: usize, targets: &[usize]) -> EdgeGrad {
    let xv = table.row(x);
    let dists: Vec<f64> = targets
        .iter()
        .map(|&t| distance_unchecked(xv, table.row(t)))
        .collect();
    let (loss, w) = softmax_nll(&dists);
    let mut anchor = vec![0.0; table.dim()];
    let mut tg = Vec::with_capacity(targets.len());
    for (j, &t) in targets.iter().enumerate() {
        let dl_dd = if j == 0 { 1.0 - w[0] } else { -w[j] };
        let (gx, gt) = distance_grad(xv, table.row(t));
        for (a, g) in anchor.iter_mut().zip(&gx) {
            *a += dl_dd * g;
        }
        tg.push(gt.into_iter().map(|g| g * dl_dd).collect());
    }
    EdgeGrad {
        loss,
        anchor,
        targets: tg,
    }
}

/// Stateful trainer; one call to [`DareTrainer::run_epoch`] is one pass over
/// the shuffled edge multiset.
pub struct DareTrainer {
    graph: DareGraph,
    config: DareConfig,
    table: EmbeddingTable,
    rng: Rng,
    epoch: usize,
    order: Vec<usize>,
    clamped_warned: bool,
}

impl DareTrainer {
    pub fn new(graph: &HierarchyGraph, config: DareConfig) -> Result<Self> {
        config.validate()?;
        if graph.node_keys.is_empty() {
            return Err(Error::Config("hierarchy graph is empty".into()));
        }
        let dgraph = DareGraph::new(graph, config.exclude_ancestors);
        let mut rng = seeded(config.seed);
        let mut table = EmbeddingTable::new(config.dim, config.eps_ball);
        let mut v = vec![0.0; config.dim];
        for key in dgraph.keys() {
            for c in v.iter_mut() {
                *c = rng.gen_range(-config.init_range..=config.init_range);
            }
            table.insert(key, &v)?;
        }
        let order = (0..dgraph.edges.len()).collect();
        Ok(DareTrainer {
            graph: dgraph,
            config,
            table,
            rng,
            epoch: 0,
            order,
            clamped_warned: false,
        })
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn graph(&self) -> &DareGraph {
        &self.graph
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn into_table(self) -> EmbeddingTable {
        self.table
    }

    /// One epoch of Riemannian SGD. `on_step` sees the table after every
    /// update. Returns the mean edge loss over the epoch.
    pub fn run_epoch_with(&mut self, mut on_step: impl FnMut(&EmbeddingTable)) -> Result<f64> {
        let lr = if self.epoch < self.config.burn_in_epochs {
            self.config.learning_rate * self.config.burn_in_lr_scale
        } else {
            self.config.learning_rate
        };
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut targets = Vec::with_capacity(self.config.negatives_per_edge + 1);
        for oi in 0..self.order.len() {
            let (x, y) = self.graph.edges[self.order[oi]];
            let available = self.graph.candidate_count(x);
            let k = self.config.negatives_per_edge.min(available);
            if k < self.config.negatives_per_edge && !self.clamped_warned {
                log::warn!(
                    "{} has only {available} negative candidates; clamping k",
                    self.graph.keys[x]
                );
                self.clamped_warned = true;
            }
            targets.clear();
            targets.push(y);
            targets.extend(self.graph.sample_indices(x, k, &mut self.rng)?);
            let g = edge_loss_grad(&self.table, x, &targets);
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    edge: format!("{} -> {}", self.graph.keys[x], self.graph.keys[y]),
                    loss: g.loss,
                });
            }
            total += g.loss;
            self.apply(x, &g.anchor, lr)?;
            for (&t, grad) in targets.iter().zip(&g.targets) {
                self.apply(t, grad, lr)?;
            }
            on_step(&self.table);
        }
        self.epoch += 1;
        self.table.trained_epochs = self.epoch;
        Ok(if self.order.is_empty() {
            0.0
        } else {
            total / self.order.len() as f64
        })
    }

    pub fn run_epoch(&mut self) -> Result<f64> {
        self.run_epoch_with(|_| {})
    }

    fn apply(&mut self, i: usize, grad: &[f64], lr: f64) -> Result<()> {
        let eps = self.config.eps_ball;
        let rg = riemannian_rescale(grad, self.table.row(i));
        let row = self.table.row_mut(i);
        for (p, g) in row.iter_mut().zip(&rg) {
            *p -= lr * g;
        }
        project_in_place(row, eps)
    }
}

/// Train for `config.epochs` epochs and return the table.
pub fn train_dare(graph: &HierarchyGraph, config: &DareConfig) -> Result<EmbeddingTable> {
    let mut t = DareTrainer::new(graph, config.clone())?;
    for _ in 0..config.epochs {
        let loss = t.run_epoch()?;
        log::debug!("dare epoch {} mean loss {loss:.5}", t.epochs_done());
    }
    Ok(t.into_table())
}

/// Mean rank of each true child among the anchor's non-excluded keys plus
/// the child itself (1 = best).
pub fn mean_reconstruction_rank(table: &EmbeddingTable, graph: &DareGraph) -> f64 {
    if graph.edges.is_empty() {
        return 0.0;
    }
    let rows: Vec<usize> = graph
        .keys
        .iter()
        .map(|k| table.index_of(k).expect("table covers graph"))
        .collect();
    let mut total = 0usize;
    for &(x, y) in &graph.edges {
        let xv = table.row(rows[x]);
        let dy = distance_unchecked(xv, table.row(rows[y]));
        let better = (0..graph.keys.len())
            .filter(|&c| !graph.is_excluded(x, c))
            .filter(|&c| distance_unchecked(xv, table.row(rows[c])) < dy)
            .count();
        total += 1 + better;
    }
    total as f64 / graph.edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DepEdge;

    fn edge(p: &str, c: &str) -> DepEdge {
        DepEdge {
            parent: p.into(),
            child: c.into(),
        }
    }

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len(), DEFAULT_EPS_BALL);
        for (k, v) in rows {
            t.insert(k, v).unwrap();
        }
        t
    }

    #[test]
    fn star_root_has_no_negatives() {
        let g = HierarchyGraph::from_edges(vec![edge("r", "a"), edge("r", "b"), edge("r", "c")]);
        let dg = DareGraph::new(&g, false);
        let mut rng = seeded(1);
        assert!(matches!(
            negative_sample("r", 1, &dg, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn chain_with_isolated_node() {
        let mut g = HierarchyGraph::from_edges(vec![edge("a", "b")]);
        g.add_node("c");
        let dg = DareGraph::new(&g, false);
        let mut rng = seeded(1);
        assert_eq!(negative_sample("a", 1, &dg, &mut rng).unwrap(), vec!["c"]);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_valid() {
        let edges = (0..30).map(|i| edge("root", &format!("n{i}"))).collect();
        let mut g = HierarchyGraph::from_edges(edges);
        for i in 0..20 {
            g.add_node(&format!("iso{i}"));
        }
        let dg = DareGraph::new(&g, false);
        let a = negative_sample("root", 5, &dg, &mut seeded(9)).unwrap();
        let b = negative_sample("root", 5, &dg, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 5);
        assert!(a.iter().all(|k| k.starts_with("iso")));
        // dense path
        let c = negative_sample("n3", 40, &dg, &mut seeded(2)).unwrap();
        assert!(!c.contains(&"n3".to_string()));
        assert_eq!(c.iter().collect::<HashSet<_>>().len(), 40);
    }

    #[test]
    fn exclude_ancestors_flag() {
        let mut g = HierarchyGraph::from_edges(vec![edge("a", "b"), edge("b", "c")]);
        g.add_node("d");
        let plain = DareGraph::new(&g, false);
        let anc = DareGraph::new(&g, true);
        let c = plain.index_of("c").unwrap();
        let a = plain.index_of("a").unwrap();
        assert!(!plain.is_excluded(c, a));
        assert!(anc.is_excluded(c, a));
        assert_eq!(negative_sample("c", 1, &anc, &mut seeded(0)).unwrap(), vec!["d"]);
    }

    #[test]
    fn singleton_softmax_has_zero_loss() {
        let t = table(&[("x", &[0.1, 0.0]), ("y", &[0.0, 0.3])]);
        assert!(edge_loss("x", "y", &[], &t).unwrap().abs() < 1e-15);
    }

    #[test]
    fn equidistant_negative_gives_ln2() {
        let t = table(&[("x", &[0.0, 0.0]), ("y", &[0.3, 0.0]), ("z", &[0.0, -0.3])]);
        let l = edge_loss("x", "y", &["z".into()], &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn closer_positive_lowers_loss() {
        let far = table(&[("x", &[0.0, 0.0]), ("y", &[0.5, 0.0]), ("z", &[0.0, 0.2])]);
        let near = table(&[("x", &[0.0, 0.0]), ("y", &[0.3, 0.0]), ("z", &[0.0, 0.2])]);
        let n = ["z".to_string()];
        assert!(edge_loss("x", "y", &n, &near).unwrap() < edge_loss("x", "y", &n, &far).unwrap());
    }

    #[test]
    fn missing_key_is_lookup_error() {
        let t = table(&[("x", &[0.0])]);
        assert!(matches!(edge_loss("x", "nope", &[], &t), Err(Error::Lookup(_))));
    }

    #[test]
    fn nearest_contract() {
        let t = table(&[("a", &[0.0, 0.0]), ("b", &[0.5, 0.0]), ("c", &[0.1, 0.0])]);
        let n = nearest(&t, "a", 10).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!(n[0].0, "c");
        assert!(n.windows(2).all(|w| w[0].1 <= w[1].1));
        let two = table(&[("a", &[0.0]), ("b", &[0.5])]);
        assert_eq!(nearest(&two, "a", 3).unwrap()[0].0, "b");
        assert!(matches!(nearest(&t, "zz", 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn text_format_validation() {
        let bad = "2 3\na 0.1 0.2 0.3\nb 0.1 0.2\n";
        assert!(matches!(
            EmbeddingTable::from_text(bad, DEFAULT_EPS_BALL),
            Err(Error::Format { line: 3, .. })
        ));
        let outside = "1 2\na 1.2 0\n";
        let t = EmbeddingTable::from_text(outside, DEFAULT_EPS_BALL).unwrap();
        assert!((t.get("a").unwrap()[0] - (1.0 - DEFAULT_EPS_BALL)).abs() < 1e-12);
        let t2 = EmbeddingTable::from_text(&t.to_text(), DEFAULT_EPS_BALL).unwrap();
        assert!((t2.get("a").unwrap()[0] - t.get("a").unwrap()[0]).abs() < 1e-8);
        assert!(EmbeddingTable::from_text("3 2\na 0 0\n", DEFAULT_EPS_BALL).is_err());
    }

    #[test]
    fn chain_training_reduces_loss() {
        let mut g = HierarchyGraph::from_edges(vec![edge("a", "b"), edge("b", "c")]);
        for i in 0..4 {
            g.add_node(&format!("iso{i}"));
        }
        let cfg = DareConfig {
            dim: 2,
            negatives_per_edge: 2,
            ..Default::default()
        };
        let mut t = DareTrainer::new(&g, cfg).unwrap();
        let first = t.run_epoch().unwrap();
        let mut last = first;
        for _ in 1..50 {
            last = t.run_epoch().unwrap();
        }
        assert!(last < first, "{last} !< {first}");
    }
}
