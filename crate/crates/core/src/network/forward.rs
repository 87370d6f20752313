//! Differentiable forward pass of one network.
//!
//! `item + position (+ aux)` embedding → causal transformer stack →
//! co-attention re-weighting guided by the popularity embedding → dot-product
//! scores against the item table.

use ndarray::Array2;
use rand::Rng as _;

use super::params::{slot, NetworkConfig, NetworkParameters};
use crate::autograd::{Graph, Matrix, NodeId};
use crate::corpus::{AuxTable, PAD};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward pass needs besides the input sequence.
#[derive(Clone, Copy)]
pub struct Network<'p> {
    pub config: &'p NetworkConfig,
    pub params: &'p NetworkParameters,
    pub aux: &'p AuxTable,
}

/// Lazily registers parameter blocks on a graph, once each.
pub struct Binder<'p> {
    params: &'p NetworkParameters,
    nodes: Vec<Option<NodeId>>,
}

impl<'p> Binder<'p> {
    pub fn new(params: &'p NetworkParameters) -> Self {
        Self {
            params,
            nodes: vec![None; params.blocks().len()],
        }
    }

    pub fn get(&mut self, g: &mut Graph<'p>, slot: usize) -> NodeId {
        if let Some(id) = self.nodes[slot] {
            return id;
        }
        let params: &'p NetworkParameters = self.params;
        let id = g.param(slot, params.block(slot));
        self.nodes[slot] = Some(id);
        id
    }
}

/// Inverted dropout driven by an explicit generator; a no-op in eval mode.
pub struct Dropout {
    rng: Option<Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn for_mode(mode: Mode, rng: Rng) -> Self {
        match mode {
            Mode::Train => Self::train(rng),
            Mode::Eval => Self::eval(),
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: NodeId, rate: f64) -> NodeId {
        let Some(rng) = self.rng.as_mut() else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = Matrix::from_shape_simple_fn(g.value(x).raw_dim(), || {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        g.mul_const(x, mask)
    }
}

/// Node handles of one forward pass on a graph.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub embedding: NodeId,
    pub hidden: Vec<NodeId>,
    pub popularity: NodeId,
    pub affinity: Option<NodeId>,
    pub attention_map: Option<NodeId>,
    pub attention: Option<NodeId>,
    pub h_pop: NodeId,
    pub logits: NodeId,
}

/// Value snapshot of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `E`, `n × d`.
    pub embedding: Matrix,
    /// Output of each transformer layer.
    pub hidden: Vec<Matrix>,
    /// `E_Q`, `n × d`.
    pub popularity: Matrix,
    /// `A`, `n × n`; `None` when co-attention is disabled.
    pub affinity: Option<Matrix>,
    /// `C_map`, `k × n`.
    pub attention_map: Option<Matrix>,
    /// `α` over positions; zero at padding.
    pub attention: Option<Vec<f64>>,
    pub h_pop: Matrix,
    /// `n × (|V| + 1)` scores; column 0 is `-inf`.
    pub scores: Matrix,
}

impl ForwardTrace {
    pub fn encoder_output(&self) -> &Matrix {
        self.hidden.last().unwrap_or(&self.embedding)
    }

    pub fn score_row(&self, position: usize) -> &[f64] {
        let n = self.scores.ncols();
        &self.scores.as_slice().expect("standard layout")[position * n..(position + 1) * n]
    }
}

fn real_mask_column(positions: &[usize]) -> Matrix {
    Matrix::from_shape_fn((positions.len(), 1), |(t, _)| f64::from(positions[t] != PAD))
}

/// Query `t` may attend to key `j` iff `j <= t` and `j` is real, or `j == t`.
pub fn causal_mask(positions: &[usize]) -> Array2<bool> {
    let n = positions.len();
    Array2::from_shape_fn((n, n), |(t, j)| j == t || (j < t && positions[j] != PAD))
}

impl<'p> Network<'p> {
    pub fn new(config: &'p NetworkConfig, params: &'p NetworkParameters, aux: &'p AuxTable) -> Self {
        Self { config, params, aux }
    }

    fn check_positions(&self, positions: &[usize]) -> Result<()> {
        if positions.len() != self.config.n {
            return Err(Error::Dimension(format!(
                "sequence length {} does not match n = {}",
                positions.len(),
                self.config.n
            )));
        }
        let num_items = self.params.num_items();
        if let Some(&bad) = positions.iter().find(|&&v| v > num_items) {
            return Err(Error::invalid(format!("unknown item index {bad}")));
        }
        Ok(())
    }

    pub fn embed_input_node(
        &self,
        g: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        positions: &[usize],
    ) -> Result<NodeId> {
        self.check_positions(positions)?;
        let table = binder.get(g, slot::ITEM_EMB);
        let items = g.gather(table, positions);
        let pos = binder.get(g, slot::POS_EMB);
        let mut e = g.add(items, pos);
        if self.config.use_aux {
            if self.aux.num_items() != self.params.num_items() || self.aux.dim() != self.params.aux_dim() {
                return Err(Error::Dimension("aux table does not match the parameters".into()));
            }
            let mut rows = Matrix::zeros((positions.len(), self.aux.dim()));
            for (mut row, &v) in rows.rows_mut().into_iter().zip(positions) {
                row.assign(&self.aux.vector(v));
            }
            let aux_in = g.constant(rows);
            let w = binder.get(g, slot::AUX_W);
            let projected = g.matmul(aux_in, w);
            let mask = g.constant(real_mask_column(positions));
            let b = binder.get(g, slot::AUX_B);
            let bias = g.matmul(mask, b);
            let aux = g.add(projected, bias);
            e = g.add(e, aux);
        }
        Ok(e)
    }

    pub fn embed_popularity_node(
        &self,
        g: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        scores: &[f64],
    ) -> Result<NodeId> {
        if scores.len() != self.config.n {
            return Err(Error::Dimension("popularity vector length must equal n".into()));
        }
        if scores.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::invalid("popularity scores must be finite and non-negative"));
        }
        let n = scores.len();
        if !self.config.use_popularity_embedding {
            return Ok(g.constant(Matrix::zeros((n, self.config.d))));
        }
        let q = g.constant(Matrix::from_shape_vec((n, 1), scores.to_vec()).expect("n × 1"));
        let w = binder.get(g, slot::POP_W);
        let mut eq = g.matmul(q, w);
        if self.config.use_popularity_bias {
            let ones = g.constant(Matrix::ones((n, 1)));
            let b = binder.get(g, slot::POP_B);
            let bias = g.matmul(ones, b);
            eq = g.add(eq, bias);
        }
        Ok(eq)
    }

    /// Causal transformer stack; returns the output of every layer.
    pub fn encode_nodes(
        &self,
        g: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        input: NodeId,
        positions: &[usize],
        dropout: &mut Dropout,
    ) -> Result<Vec<NodeId>> {
        let cfg = self.config;
        let mask = causal_mask(positions);
        let head_dim = cfg.d / cfg.heads;
        let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
        let mut h = input;
        let mut outputs = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |b| slot::layer(l, b);
            let proj = |g: &mut Graph<'p>, binder: &mut Binder<'p>, x, w, b| {
                let wn = binder.get(g, p(w));
                let bn = binder.get(g, p(b));
                let y = g.matmul(x, wn);
                g.add_row(y, bn)
            };
            let q = proj(g, binder, h, 0, 1);
            let k = proj(g, binder, h, 2, 3);
            let v = proj(g, binder, h, 4, 5);
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let (qh, kh, vh) = if cfg.heads == 1 {
                    (q, k, v)
                } else {
                    let (a, b) = (head * head_dim, (head + 1) * head_dim);
                    (g.slice_cols(q, a, b), g.slice_cols(k, a, b), g.slice_cols(v, a, b))
                };
                let logits = g.matmul_bt(qh, kh);
                let logits = g.scale(logits, inv_sqrt);
                let probs = g.masked_softmax(logits, &mask);
                let probs = dropout.apply(g, probs, cfg.dropout_attn);
                heads.push(g.matmul(probs, vh));
            }
            let attended = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
            let sa = proj(g, binder, attended, 6, 7);
            let sa = dropout.apply(g, sa, cfg.dropout_hidden);
            let res = g.add(h, sa);
            let (g1, b1) = (binder.get(g, p(8)), binder.get(g, p(9)));
            let f = g.layer_norm(res, g1, b1, cfg.layer_norm_eps);

            let inner = proj(g, binder, f, 10, 11);
            let inner = g.gelu(inner);
            let ff = proj(g, binder, inner, 12, 13);
            let ff = dropout.apply(g, ff, cfg.dropout_hidden);
            let res = g.add(f, ff);
            let (g2, b2) = (binder.get(g, p(14)), binder.get(g, p(15)));
            h = g.layer_norm(res, g2, b2, cfg.layer_norm_eps);
            if g.value(h).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            outputs.push(h);
        }
        Ok(outputs)
    }

    /// Parallel co-attention. Returns `(H_pop, A, C_map, α)`.
    pub fn coattend_nodes(
        &self,
        g: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        h: NodeId,
        eq: NodeId,
        positions: &[usize],
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let n_real = positions.iter().filter(|&&v| v != PAD).count();
        if n_real == 0 {
            return Err(Error::invalid("co-attention over an all-padding sequence"));
        }
        let wa = binder.get(g, slot::CO_AFFINITY);
        let hw = g.matmul(h, wa);
        let a_pre = g.matmul_bt(hw, eq);
        let affinity = g.tanh(a_pre);

        let w_seq = binder.get(g, slot::CO_SEQ);
        let seq_part = g.matmul_bt(w_seq, h);
        let w_pop = binder.get(g, slot::CO_POP);
        let pop_proj = g.matmul_bt(w_pop, eq);
        let pop_part = g.matmul(pop_proj, affinity);
        let summed = g.add(seq_part, pop_part);
        let cmap = g.tanh(summed);

        let wc = binder.get(g, slot::CO_SCORE);
        let position_scores = g.matmul(wc, cmap);
        let mask = Array2::from_shape_fn((1, positions.len()), |(_, t)| positions[t] != PAD);
        let alpha = g.masked_softmax(position_scores, &mask);
        let gains = g.scale(alpha, self.config.tau * n_real as f64);
        let weighted = g.scale_rows(h, gains);
        let h_pop = g.add(h, weighted);
        Ok((h_pop, affinity, cmap, alpha))
    }

    /// Full forward pass recorded on `g`.
    pub fn forward_nodes(
        &self,
        g: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        positions: &[usize],
        popularity: &[f64],
        dropout: &mut Dropout,
    ) -> Result<ForwardNodes> {
        let embedding = self.embed_input_node(g, binder, positions)?;
        let input = dropout.apply(g, embedding, self.config.dropout_hidden);
        let hidden = self.encode_nodes(g, binder, input, positions, dropout)?;
        let h = hidden.last().copied().unwrap_or(input);
        let popularity = self.embed_popularity_node(g, binder, popularity)?;
        let (h_pop, affinity, attention_map, attention) = if self.config.use_coattention {
            let (hp, a, c, al) = self.coattend_nodes(g, binder, h, popularity, positions)?;
            (hp, Some(a), Some(c), Some(al))
        } else {
            (h, None, None, None)
        };
        let table = binder.get(g, slot::ITEM_EMB);
        let logits = g.matmul_bt(h_pop, table);
        Ok(ForwardNodes {
            embedding,
            hidden,
            popularity,
            affinity,
            attention_map,
            attention,
            h_pop,
            logits,
        })
    }

    pub fn trace(g: &Graph<'_>, nodes: &ForwardNodes) -> ForwardTrace {
        let mut scores = g.value(nodes.logits).clone();
        scores.column_mut(0).fill(f64::NEG_INFINITY);
        ForwardTrace {
            embedding: g.value(nodes.embedding).clone(),
            hidden: nodes.hidden.iter().map(|&h| g.value(h).clone()).collect(),
            popularity: g.value(nodes.popularity).clone(),
            affinity: nodes.affinity.map(|a| g.value(a).clone()),
            attention_map: nodes.attention_map.map(|c| g.value(c).clone()),
            attention: nodes.attention.map(|a| g.value(a).iter().copied().collect()),
            h_pop: g.value(nodes.h_pop).clone(),
            scores,
        }
    }

    pub fn forward(
        &self,
        positions: &[usize],
        popularity: &[f64],
        mode: Mode,
        dropout_rng: Rng,
    ) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let mut binder = Binder::new(self.params);
        let mut dropout = Dropout::for_mode(mode, dropout_rng);
        let nodes = self.forward_nodes(&mut g, &mut binder, positions, popularity, &mut dropout)?;
        Ok(Self::trace(&g, &nodes))
    }

    /// Eval-mode catalog scores at the last position only.
    pub fn score_last(&self, positions: &[usize], popularity: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut binder = Binder::new(self.params);
        let mut dropout = Dropout::eval();
        let e = self.embed_input_node(&mut g, &mut binder, positions)?;
        let hidden = self.encode_nodes(&mut g, &mut binder, e, positions, &mut dropout)?;
        let h = hidden.last().copied().unwrap_or(e);
        let h_pop = if self.config.use_coattention {
            let eq = self.embed_popularity_node(&mut g, &mut binder, popularity)?;
            self.coattend_nodes(&mut g, &mut binder, h, eq, positions)?.0
        } else {
            h
        };
        score(g.value(h_pop), self.params, positions, positions.len() - 1)
    }
}

/// Input embedding `E` (row `t` = item + position + projected aux).
pub fn embed_input(
    positions: &[usize],
    aux: &AuxTable,
    params: &NetworkParameters,
    config: &NetworkConfig,
) -> Result<Matrix> {
    let net = Network::new(config, params, aux);
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let e = net.embed_input_node(&mut g, &mut binder, positions)?;
    Ok(g.value(e).clone())
}

/// Popularity embedding `E_Q`: each score mapped through the shared affine map.
pub fn embed_popularity(scores: &[f64], params: &NetworkParameters, config: &NetworkConfig) -> Result<Matrix> {
    let aux = AuxTable::zeros(params.num_items(), params.aux_dim());
    let net = Network::new(config, params, &aux);
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let eq = net.embed_popularity_node(&mut g, &mut binder, scores)?;
    Ok(g.value(eq).clone())
}

/// Transformer stack applied to a precomputed embedding.
pub fn encode(
    embedding: &Matrix,
    positions: &[usize],
    config: &NetworkConfig,
    params: &NetworkParameters,
    mode: Mode,
    dropout_rng: Rng,
) -> Result<Matrix> {
    let aux = AuxTable::zeros(params.num_items(), params.aux_dim());
    let net = Network::new(config, params, &aux);
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let input = g.constant(embedding.clone());
    let mut dropout = Dropout::for_mode(mode, dropout_rng);
    let hidden = net.encode_nodes(&mut g, &mut binder, input, positions, &mut dropout)?;
    Ok(g.value(hidden.last().copied().unwrap_or(input)).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoAttention {
    pub h_pop: Matrix,
    pub affinity: Matrix,
    pub attention_map: Matrix,
    pub attention: Vec<f64>,
}

/// Co-attention on given `H` and `E_Q`; `positions` supplies the padding mask.
/// The temperature is taken from `config.tau`.
pub fn coattend(
    h: &Matrix,
    eq: &Matrix,
    positions: &[usize],
    params: &NetworkParameters,
    config: &NetworkConfig,
) -> Result<CoAttention> {
    let aux = AuxTable::zeros(params.num_items(), params.aux_dim());
    let net = Network::new(config, params, &aux);
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let hn = g.constant(h.clone());
    let eqn = g.constant(eq.clone());
    let (hp, a, c, al) = net.coattend_nodes(&mut g, &mut binder, hn, eqn, positions)?;
    Ok(CoAttention {
        h_pop: g.value(hp).clone(),
        affinity: g.value(a).clone(),
        attention_map: g.value(c).clone(),
        attention: g.value(al).iter().copied().collect(),
    })
}

/// Catalog scores `h_pop[position] · E_V[i]` (0-based `position`); index 0 is `-inf`.
pub fn score(h_pop: &Matrix, params: &NetworkParameters, positions: &[usize], position: usize) -> Result<Vec<f64>> {
    if position >= h_pop.nrows() {
        return Err(Error::invalid(format!("position {position} out of range")));
    }
    if positions.get(position).copied() == Some(PAD) {
        return Err(Error::invalid(format!("position {position} is padding")));
    }
    let mut out = params.item_emb.dot(&h_pop.row(position)).to_vec();
    out[0] = f64::NEG_INFINITY;
    Ok(out)
}

/// Highest-scoring real item; ties go to the lowest index.
pub fn argmax_item(scores: &[f64]) -> usize {
    let mut best = 1;
    for (i, &s) in scores.iter().enumerate().skip(2) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
