//! A small reverse-mode automatic differentiation tape over dense `f64` matrices.
//!
//! One [`Graph`] is built per sequence and per network. Parameters enter the
//! tape by reference (no copy), intermediate values are owned by the tape,
//! and [`Graph::backward`] returns one gradient slot per node.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    /// Position in the tape; indexes the vector returned by [`Graph::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// One supervised row of a catalog cross-entropy term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeTarget {
    pub row: usize,
    pub class: usize,
    pub weight: f64,
}

enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulBT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + 1·b` where `b` is a single row broadcast over the rows of `a`.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a constant matrix (dropout masks).
    MulConst(NodeId, Matrix),
    Tanh(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(NodeId),
    Gather {
        table: NodeId,
        indices: Vec<usize>,
    },
    /// Row `t` of `x` multiplied by entry `t` of the `1 × n` node `scales`.
    ScaleRows {
        x: NodeId,
        scales: NodeId,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Softmax cross-entropy over columns `1..`, column 0 (padding) excluded.
    CatalogCrossEntropy {
        logits: NodeId,
        targets: Vec<CeTarget>,
        probs: Vec<Vec<f64>>,
    },
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Numerically stable softmax over `row[1..]`; entry 0 of the result is 0.
pub fn catalog_softmax(row: &[f64]) -> Vec<f64> {
    let max = row[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; row.len()];
    let mut sum = 0.0;
    for (o, &z) in out[1..].iter_mut().zip(&row[1..]) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in &mut out[1..] {
        *o /= sum;
    }
    out
}

/// `logsumexp(row[1..]) - row[class]`.
pub fn catalog_cross_entropy(row: &[f64], class: usize) -> f64 {
    let max = row[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row[1..].iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln() - row[class]
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(128) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Cow::Owned(value), Op::Constant)
    }

    /// Registers a trainable parameter block; `slot` identifies it in [`Graph::param_grads`].
    pub fn param(&mut self, slot: usize, value: &'p Matrix) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Param(slot))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(Cow::Owned(v), Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Cow::Owned(v), Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Cow::Owned(v), Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        debug_assert_eq!(r.nrows(), 1);
        let v = self.value(a) + &r.row(0);
        self.push(Cow::Owned(v), Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a) * factor;
        self.push(Cow::Owned(v), Op::Scale(a, factor))
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Matrix) -> NodeId {
        let v = self.value(a) * &mask;
        self.push(Cow::Owned(v), Op::MulConst(a, mask))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Cow::Owned(v), Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        self.push(Cow::Owned(v), Op::Gelu(a))
    }

    /// Row-wise layer normalisation with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut normed = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in normed.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let g = self.value(gamma).row(0).to_owned();
        let b = self.value(beta).row(0).to_owned();
        let v = &normed * &g + &b;
        self.push(
            Cow::Owned(v),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Row-wise softmax restricted to `mask == true`; masked entries are exactly 0.
    /// A row with no admissible entry yields all zeros.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &Array2<bool>) -> NodeId {
        let av = self.value(a);
        let mut v = Matrix::zeros(av.raw_dim());
        for ((src, mrow), mut dst) in av.rows().into_iter().zip(mask.rows()).zip(v.rows_mut()) {
            let max = src
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for ((d, &x), &m) in dst.iter_mut().zip(src).zip(mrow) {
                if m {
                    *d = (x - max).exp();
                    sum += *d;
                }
            }
            dst.mapv_inplace(|d| d / sum);
        }
        self.push(Cow::Owned(v), Op::MaskedSoftmax(a))
    }

    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros((indices.len(), t.ncols()));
        for (mut row, &i) in v.rows_mut().into_iter().zip(indices) {
            row.assign(&t.row(i));
        }
        self.push(
            Cow::Owned(v),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn scale_rows(&mut self, x: NodeId, scales: NodeId) -> NodeId {
        let s = self.value(scales);
        let mut v = self.value(x).clone();
        for (mut row, &f) in v.rows_mut().into_iter().zip(s.iter()) {
            row *= f;
        }
        self.push(Cow::Owned(v), Op::ScaleRows { x, scales })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(Cow::Owned(v), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()))
    }

    /// Weighted sum of catalog cross-entropies, returned as a `1 × 1` node.
    pub fn catalog_cross_entropy(&mut self, logits: NodeId, targets: Vec<CeTarget>) -> NodeId {
        let lv = self.value(logits);
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for t in &targets {
            let row = lv.row(t.row);
            let row = row.as_slice().expect("standard layout");
            total += t.weight * catalog_cross_entropy(row, t.class);
            probs.push(catalog_softmax(row));
        }
        self.push(
            Cow::Owned(Matrix::from_elem((1, 1), total)),
            Op::CatalogCrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Reverse sweep from a `1 × 1` output. Returns one optional gradient per node.
    pub fn backward(&self, output: NodeId) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::ones(self.value(output).raw_dim()));

        fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, dr);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, f) => acc(&mut grads, *a, &g * *f),
                Op::MulConst(a, mask) => acc(&mut grads, *a, &g * mask),
                Op::Tanh(a) => {
                    let mut da = g.clone();
                    Zip::from(&mut da)
                        .and(node.value.as_ref())
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let mut da = g.clone();
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let gam = self.value(*gamma).row(0);
                    let dgamma = (&g * normed).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gh = &g * &gam;
                    let cols = gh.ncols() as f64;
                    let mut dx = Matrix::zeros(gh.raw_dim());
                    for (((mut dxr, ghr), nr), &inv) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(gh.rows())
                        .zip(normed.rows())
                        .zip(inv_std)
                    {
                        let mean_g = ghr.sum() / cols;
                        let mean_gn = ghr.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for ((d, &gv), &nv) in dxr.iter_mut().zip(ghr).zip(nr) {
                            *d = inv * (gv - mean_g - nv * mean_gn);
                        }
                    }
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                    acc(&mut grads, *x, dx);
                }
                Op::MaskedSoftmax(a) => {
                    let y = node.value.as_ref();
                    let mut da = Matrix::zeros(y.raw_dim());
                    for ((mut dr, yr), gr) in da.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Gather { table, indices } => {
                    let mut dt = Matrix::zeros(self.value(*table).raw_dim());
                    for (gr, &i) in g.rows().into_iter().zip(indices) {
                        let mut row = dt.row_mut(i);
                        row += &gr;
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::ScaleRows { x, scales } => {
                    let sv = self.value(*scales);
                    let xv = self.value(*x);
                    let mut dx = g.clone();
                    let mut ds = Matrix::zeros(sv.raw_dim());
                    for (t, (mut dxr, (gr, xr))) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows().into_iter().zip(xv.rows()))
                        .enumerate()
                    {
                        let f = sv.as_slice().expect("standard layout")[t];
                        dxr *= f;
                        ds.as_slice_mut().expect("standard layout")[t] =
                            gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *scales, ds);
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Matrix::zeros(self.value(*x).raw_dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::CatalogCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let upstream = g[[0, 0]];
                    let mut dl = Matrix::zeros(self.value(*logits).raw_dim());
                    for (t, p) in targets.iter().zip(probs) {
                        let mut row = dl.row_mut(t.row);
                        let w = upstream * t.weight;
                        for (d, &pv) in row.iter_mut().zip(p).skip(1) {
                            *d += w * pv;
                        }
                        row[t.class] -= w;
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }

    /// Gradients of parameter nodes, keyed by their slot, summed over repeated registrations.
    pub fn param_grads<'g>(
        &'g self,
        grads: &'g [Option<Matrix>],
    ) -> impl Iterator<Item = (usize, &'g Matrix)> + 'g {
        self.nodes
            .iter()
            .zip(grads)
            .filter_map(|(node, g)| match (&node.op, g) {
                (Op::Param(slot), Some(g)) => Some((*slot, g)),
                _ => None,
            })
    }
}
