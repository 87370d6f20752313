//! Dual-network trainer with cross pseudo-labels and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{clip_grad_norm, Adam, AdamConfig};
use super::loss::{build_targets, pseudo_label_targets, supervised_targets, TargetLayout};
use crate::autograd::Graph;
use crate::corpus::{AuxTable, SplitView, UserSequence};
use crate::error::{Error, Result};
use crate::evaluation::{ndcg_term, rank_target, Scorer};
use crate::network::{Binder, Dropout, Network, NetworkConfig, NetworkParameters};
use crate::popularity::IdfTable;
use crate::rng::{derive_seed, keyed_stream, Rng};

/// Users per gradient-accumulation chunk. Fixed so that the summation order,
/// and therefore every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the consistency term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound per network; 0 disables clipping.
    pub grad_clip: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Initialization seeds of network 1 and network 2.
    pub seeds: [u64; 2],
    /// Seed of the dropout and batch-order streams.
    pub data_seed: u64,
    /// Train two networks with pseudo-labels; otherwise a single supervised network.
    pub cross_pseudo: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_root_seed(0)
    }
}

impl TrainConfig {
    /// Defaults with every seed derived from `root`.
    pub fn from_root_seed(root: u64) -> Self {
        Self {
            lambda: 0.3,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            grad_clip: 5.0,
            max_epochs: 100,
            patience: 20,
            batch_size: 128,
            seeds: [derive_seed(root, &["init-1"]), derive_seed(root, &["init-2"])],
            data_seed: root,
            cross_pseudo: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("weight decay and gradient clip must be non-negative");
        }
        if self.patience == 0 || self.batch_size == 0 {
            return bad("patience and batch size must be at least 1");
        }
        if self.seeds[0] == self.seeds[1] {
            return bad("the two network seeds must differ");
        }
        Ok(())
    }

    pub fn num_networks(&self) -> usize {
        if self.cross_pseudo {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub user: usize,
    pub positions: Vec<usize>,
    pub popularity: Vec<f64>,
    pub layout: TargetLayout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationExample {
    pub user: usize,
    pub input: UserSequence,
    pub target: usize,
}

/// Training inputs and validation targets derived from a split.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub examples: Vec<TrainExample>,
    pub validation: Vec<ValidationExample>,
    pub idf: IdfTable,
    pub num_items: usize,
}

impl TrainingData {
    /// Users whose training input would be all padding (exactly one training
    /// item) contribute no training example but are still validated.
    pub fn from_split(split: &SplitView, num_items: usize) -> Result<Self> {
        let idf = IdfTable::build(&split.training_sequences(), num_items);
        let mut examples = Vec::with_capacity(split.users.len());
        let mut validation = Vec::with_capacity(split.users.len());
        for u in &split.users {
            let (input, next) = u.training_example();
            if input.real_len() > 0 {
                examples.push(TrainExample {
                    user: u.train.user_index,
                    popularity: idf.score_sequence(&input),
                    layout: build_targets(&input.positions, next)?,
                    positions: input.positions,
                });
            }
            validation.push(ValidationExample {
                user: u.train.user_index,
                input: u.validation_input().clone(),
                target: u.valid,
            });
        }
        if examples.is_empty() {
            return Err(Error::EmptyCorpus("no user has a trainable sequence".into()));
        }
        Ok(Self {
            examples,
            validation,
            idf,
            num_items,
        })
    }
}

/// Eval-mode catalog scores from one network, or the mean of several.
pub struct NetworkScorer<'a> {
    pub config: &'a NetworkConfig,
    pub params: Vec<&'a NetworkParameters>,
    pub aux: &'a AuxTable,
    pub idf: &'a IdfTable,
}

impl Scorer for NetworkScorer<'_> {
    fn scores(&self, _user: usize, input: &UserSequence) -> Result<Vec<f64>> {
        let q = self.idf.score_sequence(input);
        let mut total: Option<Vec<f64>> = None;
        for p in &self.params {
            let s = Network::new(self.config, p, self.aux).score_last(&input.positions, &q)?;
            total = Some(match total {
                None => s,
                Some(mut acc) => {
                    acc.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        let mut out = total.ok_or_else(|| Error::invalid("scorer has no network"))?;
        let k = self.params.len() as f64;
        out.iter_mut().skip(1).for_each(|v| *v /= k);
        Ok(out)
    }
}

/// Mean validation NDCG@10 of `scorer`.
pub fn validation_ndcg10(scorer: &dyn Scorer, validation: &[ValidationExample]) -> Result<f64> {
    let terms: Vec<f64> = validation
        .par_iter()
        .map(|v| Ok(ndcg_term(rank_target(&scorer.scores(v.user, &v.input)?, v.target)?, 10)))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub sup_loss: f64,
    pub cons_loss: f64,
    pub total_loss: f64,
    /// Present on the last step of each epoch.
    pub val_ndcg10: Option<f64>,
    pub lr: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "epoch,step,sup_loss,cons_loss,total_loss,val_ndcg10,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.sup_loss,
            self.cons_loss,
            self.total_loss,
            self.val_ndcg10.map(|v| v.to_string()).unwrap_or_default(),
            self.lr
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualTrainerState {
    pub train_config: TrainConfig,
    /// Current parameters, one per network.
    pub networks: Vec<NetworkParameters>,
    pub optimizers: Vec<Adam>,
    /// Parameters at the best validation epoch.
    pub best: Vec<NetworkParameters>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_val_ndcg10: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
}

impl DualTrainerState {
    pub fn init(net: &NetworkConfig, train: &TrainConfig, num_items: usize, aux_dim: usize) -> Self {
        let networks: Vec<NetworkParameters> = (0..train.num_networks())
            .map(|i| NetworkParameters::init(net, num_items, aux_dim, &mut Rng::seed_from_u64(train.seeds[i])))
            .collect();
        Self {
            train_config: train.clone(),
            optimizers: networks.iter().map(Adam::new).collect(),
            best: networks.clone(),
            networks,
            epoch: 0,
            step: 0,
            best_val_ndcg10: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.train_config.max_epochs || self.epochs_since_improvement >= self.train_config.patience
    }
}

struct StepSums {
    grads: Vec<NetworkParameters>,
    sup: f64,
    cons: f64,
}

impl StepSums {
    fn add(&mut self, other: StepSums) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
        self.sup += other.sup;
        self.cons += other.cons;
    }
}

/// Gradients and loss components for one user. `sup` and `cons` are summed
/// over networks, each already normalized by its position count.
fn user_step(
    net: &NetworkConfig,
    cfg: &TrainConfig,
    networks: &[NetworkParameters],
    aux: &AuxTable,
    ex: &TrainExample,
    epoch: usize,
) -> Result<StepSums> {
    let sup_targets = supervised_targets(&ex.layout)?;
    let count = networks.len();
    let mut graphs: Vec<Graph<'_>> = Vec::with_capacity(count);
    let mut logits = Vec::with_capacity(count);
    for (i, params) in networks.iter().enumerate() {
        let mut g = Graph::new();
        let mut binder = Binder::new(params);
        let rng = keyed_stream(cfg.data_seed, "dropout", &[i as u64, epoch as u64, ex.user as u64]);
        let mut dropout = Dropout::train(rng);
        let nodes = Network::new(net, params, aux).forward_nodes(&mut g, &mut binder, &ex.positions, &ex.popularity, &mut dropout)?;
        logits.push(nodes.logits);
        graphs.push(g);
    }
    let mut out = StepSums {
        grads: Vec::with_capacity(count),
        sup: 0.0,
        cons: 0.0,
    };
    for i in 0..count {
        let pseudo = if count == 2 {
            let other = 1 - i;
            pseudo_label_targets(graphs[other].value(logits[other]), &ex.layout)
        } else {
            Vec::new()
        };
        let g = &mut graphs[i];
        let sup = g.catalog_cross_entropy(logits[i], sup_targets.clone());
        out.sup += g.scalar(sup);
        let loss = if pseudo.is_empty() {
            sup
        } else {
            let cons = g.catalog_cross_entropy(logits[i], pseudo);
            out.cons += g.scalar(cons);
            let weighted = g.scale(cons, cfg.lambda);
            g.add(sup, weighted)
        };
        let grads = g.backward(loss);
        let mut acc = networks[i].zeros_like();
        {
            let mut blocks = acc.blocks_mut();
            for (slot, grad) in g.param_grads(&grads) {
                *blocks[slot] += grad;
            }
        }
        acc.freeze_padding();
        out.grads.push(acc);
    }
    Ok(out)
}

/// Runs one epoch of mini-batch updates, calling `on_log` after every step.
/// Returns without validating.
pub fn train_epoch(
    state: &mut DualTrainerState,
    net: &NetworkConfig,
    aux: &AuxTable,
    data: &TrainingData,
    on_log: &mut dyn FnMut(&StepLog) -> Result<()>,
) -> Result<Vec<StepLog>> {
    let cfg = state.train_config.clone();
    let epoch = state.epoch + 1;
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    order.shuffle(&mut keyed_stream(cfg.data_seed, "batching", &[epoch as u64]));
    let mut logs = Vec::new();
    for batch in order.chunks(cfg.batch_size) {
        let networks = &state.networks;
        let partials: Vec<StepSums> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc: Option<StepSums> = None;
                for &idx in chunk {
                    let s = user_step(net, &cfg, networks, aux, &data.examples[idx], epoch)?;
                    match acc.as_mut() {
                        None => acc = Some(s),
                        Some(a) => a.add(s),
                    }
                }
                Ok(acc.expect("chunks are non-empty"))
            })
            .collect::<Result<_>>()?;
        let mut partials = partials.into_iter();
        let mut sums = partials.next().expect("batch is non-empty");
        for p in partials {
            sums.add(p);
        }
        let scale = 1.0 / batch.len() as f64;
        let sup = sums.sup * scale;
        let cons = sums.cons * scale;
        let total = sup + cfg.lambda * cons;
        state.step += 1;
        if !total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: state.step as usize,
                loss: total,
            });
        }
        for ((params, opt), mut grads) in state.networks.iter_mut().zip(&mut state.optimizers).zip(sums.grads) {
            grads.scale(scale);
            clip_grad_norm(&mut grads, cfg.grad_clip);
            opt.step(params, &grads, &adam);
        }
        let log = StepLog {
            epoch,
            step: state.step,
            sup_loss: sup,
            cons_loss: cons,
            total_loss: total,
            val_ndcg10: None,
            lr: cfg.learning_rate,
        };
        logs.push(log);
    }
    state.epoch = epoch;
    if let Some(last) = logs.last_mut() {
        let scorer = NetworkScorer {
            config: net,
            params: vec![&state.networks[0]],
            aux,
            idf: &data.idf,
        };
        let val = validation_ndcg10(&scorer, &data.validation)?;
        last.val_ndcg10 = Some(val);
        if val > state.best_val_ndcg10 {
            state.best_val_ndcg10 = val;
            state.best_epoch = epoch;
            state.best = state.networks.clone();
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
    }
    for log in &logs {
        on_log(log)?;
    }
    Ok(logs)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: DualTrainerState,
    pub log: Vec<StepLog>,
}

/// Trains from fresh initialization until patience runs out or `max_epochs`.
pub fn train(
    data: &TrainingData,
    aux: &AuxTable,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    on_log: &mut dyn FnMut(&StepLog) -> Result<()>,
) -> Result<TrainOutcome> {
    net.validate()?;
    cfg.validate()?;
    let mut state = DualTrainerState::init(net, cfg, data.num_items, aux.dim());
    let mut log = Vec::new();
    while !state.finished() {
        log.extend(train_epoch(&mut state, net, aux, data, on_log)?);
    }
    Ok(TrainOutcome { state, log })
}
