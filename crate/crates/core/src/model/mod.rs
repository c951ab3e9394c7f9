//! The DESYR network: two feature nets, definition alignment, the reversed
//! regulation head, and the attentive orthogonal projection classifier.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Encoder, EncodedText, Label, Token};
use crate::nn::{
    dot, grl, BiLstm, Dense, ParamId, ParamStore, SelfAttention, StackedBiLstm, Tape, Tensor, Var,
};
use crate::util::{read_to_string, seeded, Rng};
use crate::{Error, Result};

/// How each definition's attention context is reduced before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefmapMode {
    /// Global average of the context: one scalar per definition.
    Scalar,
    /// Keep the whole context vector per definition.
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub fnet_hidden: usize,
    pub fnet_depth: usize,
    pub dnet_hidden: usize,
    pub use_dnet: bool,
    pub dnet_untied: bool,
    pub defmap: DefmapMode,
    pub lambda_aux: f64,
    pub grl_lambda: f64,
    /// Treat v_r as a constant inside the projection layer.
    pub stop_vr_grad: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 100,
            fnet_hidden: 256,
            fnet_depth: 2,
            dnet_hidden: 64,
            use_dnet: true,
            dnet_untied: false,
            defmap: DefmapMode::Scalar,
            lambda_aux: 0.3,
            grl_lambda: 1.0,
            stop_vr_grad: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.fnet_hidden == 0 || self.fnet_depth == 0 {
            return Err(Error::Config("model dims and depth must be >= 1".into()));
        }
        if self.use_dnet && self.dnet_hidden == 0 {
            return Err(Error::Config("dnet_hidden must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.lambda_aux < 0.0 {
            return Err(Error::Config("lambda_aux must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy whose backward pass is the true derivative of the forward
    /// function: reversal flipped to identity and v_r gradient enabled.
    /// Used for finite-difference checks of the whole graph.
    pub fn with_exact_gradients(&self) -> Self {
        ModelConfig {
            grl_lambda: -1.0,
            stop_vr_grad: false,
            ..self.clone()
        }
    }
}

/// Claim and non-claim definition texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionBank {
    pub claim: Vec<String>,
    pub nonclaim: Vec<String>,
}

impl DefinitionBank {
    /// Parse `[CLAIM]` / `[NONCLAIM]` sections, one definition per line.
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Claim,
            NonClaim,
        }
        let mut section = Section::None;
        let mut bank = DefinitionBank {
            claim: Vec::new(),
            nonclaim: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.to_ascii_uppercase().as_str() {
                "[CLAIM]" => section = Section::Claim,
                "[NONCLAIM]" | "[NON-CLAIM]" => section = Section::NonClaim,
                _ => match section {
                    Section::Claim => bank.claim.push(line.to_string()),
                    Section::NonClaim => bank.nonclaim.push(line.to_string()),
                    Section::None => {
                        return Err(Error::Format {
                            line: i + 1,
                            message: "definition outside a [CLAIM]/[NONCLAIM] section".into(),
                        })
                    }
                },
            }
        }
        if bank.claim.is_empty() || bank.nonclaim.is_empty() {
            return Err(Error::Config(
                "definitions need at least one [CLAIM] and one [NONCLAIM] entry".into(),
            ));
        }
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    /// The bundled guideline definitions (10 claim, 8 non-claim).
    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/definitions.txt")).expect("bundled definitions parse")
    }

    /// Lowercased word tokens with surrounding punctuation stripped.
    pub fn tokenize(text: &str) -> Vec<Token> {
        text.split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\''))
            .filter(|w| !w.is_empty())
            .map(|w| Token {
                form: w.to_lowercase(),
                upos: None,
            })
            .collect()
    }

    /// Embed every definition. Definitions carry no parse, so lookups back
    /// off to the mean of all `form.*` keys.
    pub fn encode(&self, encoder: &Encoder<'_>) -> EncodedBank {
        let enc = |t: &String| -> Tensor {
            let toks = Self::tokenize(t);
            let l = toks.len().max(1);
            let mut m = Tensor::zeros(l, encoder.dim());
            for (i, tok) in toks.iter().enumerate() {
                m.row_mut(i).copy_from_slice(&encoder.token_vector(tok, true));
            }
            m
        };
        EncodedBank {
            claim: self.claim.iter().map(enc).collect(),
            nonclaim: self.nonclaim.iter().map(enc).collect(),
        }
    }
}

/// Embedded definition sequences, one `T_i x emb_dim` matrix each.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBank {
    pub claim: Vec<Tensor>,
    pub nonclaim: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct FeatureNet {
    lstm: StackedBiLstm,
    attention: SelfAttention,
    head: Dense,
}

impl FeatureNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let lstm = StackedBiLstm::new(store, &format!("{name}.bilstm"), cfg.emb_dim, cfg.fnet_hidden, cfg.fnet_depth, rng);
        let d = lstm.output_dim();
        FeatureNet {
            lstm,
            attention: SelfAttention::new(store, &format!("{name}.attention"), d, rng),
            head: Dense::new(store, &format!("{name}.aux_head"), d, 2, rng),
        }
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.lstm.params();
        p.extend(self.attention.params());
        p.extend(self.head.params());
        p
    }

    /// Attention, dense, softmax over `h`.
    fn head_probs(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let (_, pooled) = self.attention.forward(tape, store, h);
        let logits = self.head.forward(tape, store, pooled);
        tape.softmax_rows(logits)
    }
}

#[derive(Debug, Clone)]
struct DefinitionNet {
    claim_enc: BiLstm,
    /// Separate non-claim encoder when untied.
    nonclaim_enc: Option<BiLstm>,
}

impl DefinitionNet {
    fn encoder(&self, claim_side: bool) -> &BiLstm {
        if claim_side {
            &self.claim_enc
        } else {
            self.nonclaim_enc.as_ref().unwrap_or(&self.claim_enc)
        }
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.claim_enc.params();
        if let Some(n) = &self.nonclaim_enc {
            p.extend(n.params());
        }
        p
    }
}

/// Per-tape handles for the encoded definitions.
pub struct BankVars {
    claim: Vec<Var>,
    nonclaim: Vec<Var>,
}

/// Handles into one example's subgraph.
#[derive(Debug, Clone, Copy)]
pub struct ExampleVars {
    pub main: Var,
    pub aux_s: Var,
    pub aux_r: Var,
    pub alpha: Var,
    pub v_s: Var,
    pub v_r: Var,
    pub projected: Var,
    pub orthogonal: Var,
    pub defmap: Option<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutputs {
    pub main_probs: [f64; 2],
    pub aux_s_probs: [f64; 2],
    pub aux_r_probs: [f64; 2],
    /// Attention weights over the padded length; zero at PAD positions.
    pub alpha: Vec<f64>,
    /// `|o_i . v_r,i| / (|o_i| |v_r,i|)` per real timestep (0 where either
    /// vector is zero).
    pub orthogonality: Vec<f64>,
}

impl ForwardOutputs {
    pub fn prob_claim(&self) -> f64 {
        self.main_probs[Label::Claim.index()]
    }

    pub fn label(&self) -> Label {
        if self.prob_claim() >= 0.5 {
            Label::Claim
        } else {
            Label::NonClaim
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesyrModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    n_claim_defs: usize,
    n_nonclaim_defs: usize,
    fnet_s: FeatureNet,
    fnet_r: FeatureNet,
    dnet: Option<DefinitionNet>,
    fusion: Option<Dense>,
    aopl_attention: SelfAttention,
    main_head: Dense,
}

impl DesyrModel {
    pub fn new(config: ModelConfig, n_claim_defs: usize, n_nonclaim_defs: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.use_dnet && (n_claim_defs == 0 || n_nonclaim_defs == 0) {
            return Err(Error::Config("definition net needs at least one definition per class".into()));
        }
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let fnet_s = FeatureNet::new(&mut store, "fnet_s", &config, &mut rng);
        let fnet_r = FeatureNet::new(&mut store, "fnet_r", &config, &mut rng);
        let d = fnet_s.lstm.output_dim();
        let (dnet, fusion) = if config.use_dnet {
            let claim_enc = BiLstm::new(&mut store, "dnet.claim", config.emb_dim, config.dnet_hidden, &mut rng);
            let nonclaim_enc = config
                .dnet_untied
                .then(|| BiLstm::new(&mut store, "dnet.nonclaim", config.emb_dim, config.dnet_hidden, &mut rng));
            let per_def = match config.defmap {
                DefmapMode::Scalar => 1,
                DefmapMode::Vector => 2 * config.dnet_hidden,
            };
            let width = d + per_def * (n_claim_defs + n_nonclaim_defs);
            let fusion = Dense::new(&mut store, "fnet_s.fusion", width, d, &mut rng);
            (
                Some(DefinitionNet {
                    claim_enc,
                    nonclaim_enc,
                }),
                Some(fusion),
            )
        } else {
            (None, None)
        };
        let aopl_attention = SelfAttention::new(&mut store, "snet.attention", d, &mut rng);
        let main_head = Dense::new(&mut store, "snet.head", d, 2, &mut rng);
        Ok(DesyrModel {
            config,
            store,
            n_claim_defs,
            n_nonclaim_defs,
            fnet_s,
            fnet_r,
            dnet,
            fusion,
            aopl_attention,
            main_head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.fnet_s.lstm.output_dim()
    }

    pub fn definition_counts(&self) -> (usize, usize) {
        (self.n_claim_defs, self.n_nonclaim_defs)
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn fusion_layer(&self) -> Option<&Dense> {
        self.fusion.as_ref()
    }

    /// Parameters on the spotlight side: f-net_s, d-net, fusion.
    pub fn fnet_s_params(&self) -> BTreeSet<ParamId> {
        let mut p: BTreeSet<ParamId> = self.fnet_s.params().into_iter().collect();
        if let Some(d) = &self.dnet {
            p.extend(d.params());
        }
        if let Some(f) = &self.fusion {
            p.extend(f.params());
        }
        p
    }

    /// Parameters of f-net_r including its reversed head.
    pub fn fnet_r_params(&self) -> BTreeSet<ParamId> {
        self.fnet_r.params().into_iter().collect()
    }

    pub fn snet_params(&self) -> BTreeSet<ParamId> {
        let mut p: BTreeSet<ParamId> = self.aopl_attention.params().into_iter().collect();
        p.extend(self.main_head.params());
        p
    }

    /// Encode the definitions with the current d-net weights.
    pub fn bank_vars(&self, tape: &mut Tape, store: &ParamStore, bank: &EncodedBank) -> Option<BankVars> {
        let dnet = self.dnet.as_ref()?;
        let mut enc = |mats: &[Tensor], claim_side: bool| -> Vec<Var> {
            mats.iter()
                .map(|m| {
                    let x = tape.leaf(m.clone());
                    dnet.encoder(claim_side).forward(tape, store, x)
                })
                .collect()
        };
        let claim = enc(&bank.claim, true);
        let nonclaim = enc(&bank.nonclaim, false);
        Some(BankVars { claim, nonclaim })
    }

    /// Luong-style alignment of the query against each definition, reduced
    /// per definition and concatenated claim-first.
    pub fn dnet_align(&self, tape: &mut Tape, query: Var, values: &[Var]) -> Var {
        let mut parts = Vec::with_capacity(values.len());
        for &v in values {
            let scores = {
                let vt = tape.transpose(v);
                tape.matmul(query, vt)
            };
            let alpha = tape.softmax_rows(scores);
            let context = tape.matmul(alpha, v);
            parts.push(match self.config.defmap {
                DefmapMode::Scalar => tape.mean_all(context),
                DefmapMode::Vector => context,
            });
        }
        tape.concat_cols(&parts)
    }

    fn defmap(&self, tape: &mut Tape, store: &ParamStore, x: Var, bank: &BankVars) -> Var {
        let dnet = self.dnet.as_ref().expect("dnet configured");
        let l = tape.shape(x).0;
        let query_for = |tape: &mut Tape, claim_side: bool| {
            let enc = dnet.encoder(claim_side).forward(tape, store, x);
            tape.row(enc, l - 1)
        };
        let q_claim = query_for(tape, true);
        let q_non = if dnet.nonclaim_enc.is_some() {
            query_for(tape, false)
        } else {
            q_claim
        };
        let c = self.dnet_align(tape, q_claim, &bank.claim);
        let n = self.dnet_align(tape, q_non, &bank.nonclaim);
        tape.concat_cols(&[c, n])
    }

    fn dropout(&self, tape: &mut Tape, h: Var, rng: Option<&mut Rng>) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let (r, c) = tape.shape(h);
                let keep = 1.0 / (1.0 - p);
                let mask = Tensor::from_vec(
                    r,
                    c,
                    (0..r * c)
                        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                        .collect(),
                );
                let m = tape.leaf(mask);
                tape.mul(h, m)
            }
            _ => h,
        }
    }

    /// Spotlight features: stacked BiLSTM, optionally fused with the
    /// definition map at every timestep.
    pub fn fnet_s_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, defmap: Option<Var>, rng: Option<&mut Rng>) -> (Var, Var) {
        let h = self.fnet_s.lstm.forward(tape, store, x);
        let h = self.dropout(tape, h, rng);
        let v_s = match (&self.fusion, defmap) {
            (Some(fusion), Some(dm)) => {
                let l = tape.shape(h).0;
                let ones = tape.leaf(Tensor::from_vec(l, 1, vec![1.0; l]));
                let tiled = tape.matmul(ones, dm);
                let cat = tape.concat_cols(&[h, tiled]);
                fusion.forward(tape, store, cat)
            }
            _ => h,
        };
        let aux = self.fnet_s.head_probs(tape, store, v_s);
        (v_s, aux)
    }

    /// Regulation features and the reversed auxiliary head.
    pub fn fnet_r_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, rng: Option<&mut Rng>) -> (Var, Var) {
        let v_r = self.fnet_r.lstm.forward(tape, store, x);
        let v_r = self.dropout(tape, v_r, rng);
        let reversed = grl(tape, v_r, self.config.grl_lambda);
        let aux = self.fnet_r.head_probs(tape, store, reversed);
        (v_r, aux)
    }

    /// Project v_s off v_r per timestep, then attend. Returns
    /// `(attended, alpha, p, o)`.
    pub fn aopl(&self, tape: &mut Tape, store: &ParamStore, v_s: Var, v_r: Var) -> (Var, Var, Var, Var) {
        let v_r = if self.config.stop_vr_grad {
            tape.stop_grad(v_r)
        } else {
            v_r
        };
        let p = tape.proj_rows(v_s, v_r);
        let resid = tape.sub(v_s, p);
        let o = tape.proj_rows(v_s, resid);
        let (alpha, attended) = self.aopl_attention.forward(tape, store, o);
        (attended, alpha, p, o)
    }

    /// Full graph for one example of `l x emb_dim` real-token rows.
    pub fn build(&self, tape: &mut Tape, store: &ParamStore, input: &Tensor, bank: Option<&BankVars>, mut rng: Option<&mut Rng>) -> ExampleVars {
        assert_eq!(input.cols, self.config.emb_dim, "embedding width");
        let x = tape.leaf(input.clone());
        let defmap = match (self.dnet.is_some(), bank) {
            (true, Some(b)) => Some(self.defmap(tape, store, x, b)),
            (true, None) => panic!("definition bank required"),
            _ => None,
        };
        let (v_s, aux_s) = self.fnet_s_forward(tape, store, x, defmap, rng.as_deref_mut());
        let (v_r, aux_r) = self.fnet_r_forward(tape, store, x, rng.as_deref_mut());
        let (attended, alpha, projected, orthogonal) = self.aopl(tape, store, v_s, v_r);
        let logits = self.main_head.forward(tape, store, attended);
        let main = tape.softmax_rows(logits);
        ExampleVars {
            main,
            aux_s,
            aux_r,
            alpha,
            v_s,
            v_r,
            projected,
            orthogonal,
            defmap,
        }
    }

    /// `focal(main) + lambda_aux * (focal(aux_s) + focal(aux_r))`.
    pub fn loss_var(&self, tape: &mut Tape, ex: &ExampleVars, y: Label, gamma: f64) -> Var {
        let main = tape.focal(ex.main, y.index(), gamma);
        if self.config.lambda_aux == 0.0 {
            return main;
        }
        let s = tape.focal(ex.aux_s, y.index(), gamma);
        let r = tape.focal(ex.aux_r, y.index(), gamma);
        let aux = tape.add(s, r);
        let aux = tape.scale(aux, self.config.lambda_aux);
        tape.add(main, aux)
    }

    /// Mean loss over a batch and the parameter gradients.
    pub fn batch_gradients(&self, bank: Option<&EncodedBank>, batch: &[(&Tensor, Label)], gamma: f64, mut rng: Option<&mut Rng>) -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bv = bank.and_then(|b| self.bank_vars(&mut tape, &self.store, b));
        let mut losses = Vec::with_capacity(batch.len());
        for (x, y) in batch {
            let ex = self.build(&mut tape, &self.store, x, bv.as_ref(), rng.as_deref_mut());
            losses.push(self.loss_var(&mut tape, &ex, *y, gamma));
        }
        let total = tape.add_scalars(&losses);
        let mean = tape.scale(total, 1.0 / batch.len() as f64);
        let grads = tape.backward(mean);
        let mut acc = self.store.zeros_like();
        grads.accumulate_into(&mut acc);
        (tape.scalar(mean), acc)
    }

    /// Inference on encoded texts. The definitions are encoded once.
    pub fn forward(&self, bank: Option<&EncodedBank>, inputs: &[EncodedText]) -> Vec<ForwardOutputs> {
        let mut tape = Tape::new();
        let bv = bank.and_then(|b| self.bank_vars(&mut tape, &self.store, b));
        inputs
            .iter()
            .map(|enc| {
                let rows = enc.real_rows();
                let ex = self.build(&mut tape, &self.store, &rows, bv.as_ref(), None);
                self.outputs(&tape, &ex, enc.mask.len().max(rows.rows))
            })
            .collect()
    }

    /// Inference on raw `l x emb_dim` matrices.
    pub fn forward_rows(&self, bank: Option<&EncodedBank>, inputs: &[Tensor]) -> Vec<ForwardOutputs> {
        let mut tape = Tape::new();
        let bv = bank.and_then(|b| self.bank_vars(&mut tape, &self.store, b));
        inputs
            .iter()
            .map(|rows| {
                let ex = self.build(&mut tape, &self.store, rows, bv.as_ref(), None);
                self.outputs(&tape, &ex, rows.rows)
            })
            .collect()
    }

    pub fn outputs(&self, tape: &Tape, ex: &ExampleVars, padded_len: usize) -> ForwardOutputs {
        let pair = |v: Var| {
            let d = &tape.value(v).data;
            [d[0], d[1]]
        };
        let mut alpha = tape.value(ex.alpha).data.clone();
        alpha.resize(padded_len.max(alpha.len()), 0.0);
        let o = tape.value(ex.orthogonal);
        let vr = tape.value(ex.v_r);
        let orthogonality = (0..o.rows)
            .map(|i| {
                let (a, b) = (o.row(i), vr.row(i));
                let denom = dot(a, a).sqrt() * dot(b, b).sqrt();
                if denom == 0.0 {
                    0.0
                } else {
                    dot(a, b).abs() / denom
                }
            })
            .collect();
        ForwardOutputs {
            main_probs: pair(ex.main),
            aux_s_probs: pair(ex.aux_s),
            aux_r_probs: pair(ex.aux_r),
            alpha,
            orthogonality,
        }
    }

    pub fn uses_dnet(&self) -> bool {
        self.dnet.is_some()
    }
}

/// Loss from already-computed outputs.
pub fn total_loss(outputs: &ForwardOutputs, y: Label, gamma: f64, lambda_aux: f64) -> f64 {
    use crate::nn::focal_loss;
    let i = y.index();
    focal_loss(&outputs.main_probs, i, gamma)
        + lambda_aux * (focal_loss(&outputs.aux_s_probs, i, gamma) + focal_loss(&outputs.aux_r_probs, i, gamma))
}

/// Per-example majority over ensemble members; ties go to claim.
pub fn vote(predictions: &[Vec<Label>]) -> Result<Vec<Label>> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::Invalid("cannot vote with an empty ensemble".into()))?;
    let n = first.len();
    if predictions.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("ensemble members predict different lengths".into()));
    }
    Ok((0..n)
        .map(|i| {
            let claims = predictions.iter().filter(|p| p[i] == Label::Claim).count();
            if 2 * claims >= predictions.len() {
                Label::Claim
            } else {
                Label::NonClaim
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
