use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Architecture hyperparameters of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Embedding / hidden size.
    pub d: usize,
    /// Co-attention projection size.
    pub k: usize,
    /// Sequence length.
    pub n: usize,
    pub layers: usize,
    pub heads: usize,
    /// Inner size of the point-wise feed-forward block.
    pub ffn_dim: usize,
    /// Co-attention temperature.
    pub tau: f64,
    pub dropout_hidden: f64,
    pub dropout_attn: f64,
    pub layer_norm_eps: f64,
    pub use_aux: bool,
    pub use_coattention: bool,
    pub use_popularity_embedding: bool,
    /// Bias term of the popularity affine map; the "w/o user embedding" ablation turns it off.
    pub use_popularity_bias: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            d: 64,
            k: 64,
            n: 50,
            layers: 2,
            heads: 1,
            ffn_dim: 256,
            tau: 1.0,
            dropout_hidden: 0.5,
            dropout_attn: 0.2,
            layer_norm_eps: 1e-12,
            use_aux: true,
            use_coattention: true,
            use_popularity_embedding: true,
            use_popularity_bias: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("d", self.d), ("k", self.k), ("n", self.n), ("heads", self.heads), ("ffn_dim", self.ffn_dim)];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("net.{name} must be at least 1")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config("net.d must be divisible by net.heads".into()));
        }
        for (name, p) in [("dropout_hidden", self.dropout_hidden), ("dropout_attn", self.dropout_attn)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("net.{name} must lie in [0, 1)")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("net.tau must be positive".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("net.layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Every ablation switch off: a plain causal transformer next-item model.
    pub fn sasrec_equivalent(&self) -> Self {
        Self {
            use_aux: false,
            use_coattention: false,
            use_popularity_embedding: false,
            use_popularity_bias: false,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gamma: Matrix,
    pub ln1_beta: Matrix,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
    pub ln2_gamma: Matrix,
    pub ln2_beta: Matrix,
}

pub(crate) const LAYER_BLOCKS: usize = 16;
const LAYER_NAMES: [&str; LAYER_BLOCKS] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gamma", "ln1_beta", "ffn_w1", "ffn_b1",
    "ffn_w2", "ffn_b2", "ln2_gamma", "ln2_beta",
];

impl LayerParams {
    fn blocks(&self) -> [&Matrix; LAYER_BLOCKS] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_gamma, &self.ln1_beta, &self.ffn_w1, &self.ffn_b1, &self.ffn_w2,
            &self.ffn_b2, &self.ln2_gamma, &self.ln2_beta,
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Matrix; LAYER_BLOCKS] {
        [
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_gamma, &mut self.ln1_beta,
            &mut self.ffn_w1, &mut self.ffn_b1, &mut self.ffn_w2, &mut self.ffn_b2,
            &mut self.ln2_gamma, &mut self.ln2_beta,
        ]
    }
}

/// All learnable weights of one network. The same type doubles as a gradient
/// buffer and as optimizer moment storage.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters {
    /// `(|V| + 1) × d`; row 0 is the padding row and stays zero.
    pub item_emb: Matrix,
    pub pos_emb: Matrix,
    pub aux_w: Matrix,
    pub aux_b: Matrix,
    /// `1 × d` popularity affine weight and bias.
    pub pop_w: Matrix,
    pub pop_b: Matrix,
    /// Affinity weight, `d × d`.
    pub co_affinity: Matrix,
    /// Sequence projection, `k × d`.
    pub co_seq: Matrix,
    /// Popularity projection, `k × d`.
    pub co_pop: Matrix,
    /// Position scoring vector, `1 × k`.
    pub co_score: Matrix,
    pub layers: Vec<LayerParams>,
}

/// Slot numbers of the fixed (non-layer) blocks, matching [`NetworkParameters::blocks`].
pub mod slot {
    pub const ITEM_EMB: usize = 0;
    pub const POS_EMB: usize = 1;
    pub const AUX_W: usize = 2;
    pub const AUX_B: usize = 3;
    pub const POP_W: usize = 4;
    pub const POP_B: usize = 5;
    pub const CO_AFFINITY: usize = 6;
    pub const CO_SEQ: usize = 7;
    pub const CO_POP: usize = 8;
    pub const CO_SCORE: usize = 9;
    pub const FIXED: usize = 10;

    pub const fn layer(layer: usize, block: usize) -> usize {
        FIXED + layer * super::LAYER_BLOCKS + block
    }
}

const FIXED_NAMES: [&str; slot::FIXED] = [
    "item_emb", "pos_emb", "aux_w", "aux_b", "pop_w", "pop_b", "co_affinity", "co_seq", "co_pop",
    "co_score",
];

pub const INIT_STD: f64 = 0.02;

fn trunc_normal(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Matrix::from_shape_simple_fn((rows, cols), || loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            break v;
        }
    })
}

impl NetworkParameters {
    /// Shapes of every block in slot order.
    pub fn shapes(config: &NetworkConfig, num_items: usize, aux_dim: usize) -> Vec<(String, (usize, usize))> {
        let (d, k, f) = (config.d, config.k, config.ffn_dim);
        let mut out: Vec<(String, (usize, usize))> = vec![
            ("item_emb".into(), (num_items + 1, d)),
            ("pos_emb".into(), (config.n, d)),
            ("aux_w".into(), (aux_dim, d)),
            ("aux_b".into(), (1, d)),
            ("pop_w".into(), (1, d)),
            ("pop_b".into(), (1, d)),
            ("co_affinity".into(), (d, d)),
            ("co_seq".into(), (k, d)),
            ("co_pop".into(), (k, d)),
            ("co_score".into(), (1, k)),
        ];
        let layer = [
            (d, d), (1, d), (d, d), (1, d), (d, d), (1, d), (d, d), (1, d), (1, d), (1, d),
            (d, f), (1, f), (f, d), (1, d), (1, d), (1, d),
        ];
        for l in 0..config.layers {
            for (name, shape) in LAYER_NAMES.iter().zip(layer) {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out
    }

    /// Truncated-normal weights (std 0.02, cut at two std), zero biases, unit layer-norm gains.
    pub fn init(config: &NetworkConfig, num_items: usize, aux_dim: usize, rng: &mut Rng) -> Self {
        let (d, k, f) = (config.d, config.k, config.ffn_dim);
        let mut item_emb = trunc_normal(rng, num_items + 1, d);
        item_emb.row_mut(0).fill(0.0);
        let pos_emb = trunc_normal(rng, config.n, d);
        let aux_w = trunc_normal(rng, aux_dim, d);
        let pop_w = trunc_normal(rng, 1, d);
        let co_affinity = trunc_normal(rng, d, d);
        let co_seq = trunc_normal(rng, k, d);
        let co_pop = trunc_normal(rng, k, d);
        let co_score = trunc_normal(rng, 1, k);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: trunc_normal(rng, d, d),
                bq: Matrix::zeros((1, d)),
                wk: trunc_normal(rng, d, d),
                bk: Matrix::zeros((1, d)),
                wv: trunc_normal(rng, d, d),
                bv: Matrix::zeros((1, d)),
                wo: trunc_normal(rng, d, d),
                bo: Matrix::zeros((1, d)),
                ln1_gamma: Matrix::ones((1, d)),
                ln1_beta: Matrix::zeros((1, d)),
                ffn_w1: trunc_normal(rng, d, f),
                ffn_b1: Matrix::zeros((1, f)),
                ffn_w2: trunc_normal(rng, f, d),
                ffn_b2: Matrix::zeros((1, d)),
                ln2_gamma: Matrix::ones((1, d)),
                ln2_beta: Matrix::zeros((1, d)),
            })
            .collect();
        Self {
            item_emb,
            pos_emb,
            aux_w,
            aux_b: Matrix::zeros((1, d)),
            pop_w,
            pop_b: Matrix::zeros((1, d)),
            co_affinity,
            co_seq,
            co_pop,
            co_score,
            layers,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for b in out.blocks_mut() {
            b.fill(0.0);
        }
        out
    }

    pub fn blocks(&self) -> Vec<&Matrix> {
        let mut out = vec![
            &self.item_emb, &self.pos_emb, &self.aux_w, &self.aux_b, &self.pop_w, &self.pop_b,
            &self.co_affinity, &self.co_seq, &self.co_pop, &self.co_score,
        ];
        for l in &self.layers {
            out.extend(l.blocks());
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.item_emb, &mut self.pos_emb, &mut self.aux_w, &mut self.aux_b,
            &mut self.pop_w, &mut self.pop_b, &mut self.co_affinity, &mut self.co_seq,
            &mut self.co_pop, &mut self.co_score,
        ];
        for l in &mut self.layers {
            out.extend(l.blocks_mut());
        }
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out: Vec<String> = FIXED_NAMES.iter().map(|s| s.to_string()).collect();
        for l in 0..self.layers.len() {
            out.extend(LAYER_NAMES.iter().map(|n| format!("layer{l}.{n}")));
        }
        out
    }

    pub fn block(&self, slot: usize) -> &Matrix {
        self.blocks()[slot]
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.nrows() - 1
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_w.nrows()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            *b *= factor;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks().iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Zeroes the padding row of the item table.
    pub fn freeze_padding(&mut self) {
        self.item_emb.row_mut(0).fill(0.0);
    }

    /// Adds uniform noise in `[-scale/2, scale/2]` to every block (padding row kept at zero).
    /// Used to move biases and layer-norm gains off their initial values in checks.
    pub fn perturb(&mut self, rng: &mut Rng, scale: f64) {
        for b in self.blocks_mut() {
            b.mapv_inplace(|v| v + scale * (rng.gen::<f64>() - 0.5));
        }
        self.freeze_padding();
    }
}
