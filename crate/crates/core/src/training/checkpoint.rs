//! Trainer checkpoint: the best parameters of every network (each in the
//! network container format), then current parameters, Adam moments and the
//! early-stopping counters.
//!
//! Dropout and batch-order streams are keyed by `(data_seed, epoch, user)`,
//! so the seeds and epoch counter are the complete generator state.

use super::adam::Adam;
use super::trainer::{DualTrainerState, TrainConfig};
use crate::error::{Error, Result};
use crate::network::checkpoint::{read_blocks, template, write_blocks, Reader, Writer};
use crate::network::{NetworkCheckpoint, NetworkConfig};

const MAGIC: &[u8; 8] = b"BICORECD";
const VERSION: u32 = 1;

pub fn encode_state(state: &DualTrainerState, net: &NetworkConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.raw(MAGIC);
    w.u32(VERSION);
    w.str(&serde_json::to_string(&state.train_config).expect("config serialises"));
    w.u64(state.epoch as u64);
    w.u64(state.step);
    w.f64(state.best_val_ndcg10);
    w.u64(state.best_epoch as u64);
    w.u64(state.epochs_since_improvement as u64);
    w.u64(state.networks.len() as u64);
    for (i, best) in state.best.iter().enumerate() {
        NetworkCheckpoint {
            config: net.clone(),
            seed: state.train_config.seeds[i],
            params: best.clone(),
        }
        .encode(&mut w);
    }
    for (params, opt) in state.networks.iter().zip(&state.optimizers) {
        write_blocks(&mut w, params);
        write_blocks(&mut w, &opt.m);
        write_blocks(&mut w, &opt.v);
        w.u64(opt.steps);
    }
    w.bytes
}

/// Decodes a trainer checkpoint; returns the state and the network config echo.
pub fn decode_state(bytes: &[u8]) -> Result<(DualTrainerState, NetworkConfig)> {
    let mut r = Reader::new(bytes);
    if r.raw(8)? != MAGIC {
        return Err(Error::Checkpoint("not a trainer checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let train_config: TrainConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::Checkpoint(format!("train config echo: {e}")))?;
    let epoch = r.u64()? as usize;
    let step = r.u64()?;
    let best_val_ndcg10 = r.f64()?;
    let best_epoch = r.u64()? as usize;
    let epochs_since_improvement = r.u64()? as usize;
    let count = r.u64()? as usize;
    if count != train_config.num_networks() {
        return Err(Error::Checkpoint(format!("{count} networks stored, config implies {}", train_config.num_networks())));
    }
    let mut best = Vec::with_capacity(count);
    let mut net_config = None;
    for _ in 0..count {
        let ck = NetworkCheckpoint::decode(&mut r)?;
        if net_config.as_ref().is_some_and(|c| c != &ck.config) {
            return Err(Error::Checkpoint("networks disagree on their config".into()));
        }
        net_config = Some(ck.config);
        best.push(ck.params);
    }
    let net_config = net_config.ok_or_else(|| Error::Checkpoint("no networks stored".into()))?;
    let mut networks = Vec::with_capacity(count);
    let mut optimizers = Vec::with_capacity(count);
    for b in &best {
        let mut params = template(&net_config, b.num_items(), b.aux_dim());
        read_blocks(&mut r, &mut params)?;
        let mut opt = Adam::new(&params);
        read_blocks(&mut r, &mut opt.m)?;
        read_blocks(&mut r, &mut opt.v)?;
        opt.steps = r.u64()?;
        networks.push(params);
        optimizers.push(opt);
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((
        DualTrainerState {
            train_config,
            networks,
            optimizers,
            best,
            epoch,
            step,
            best_val_ndcg10,
            best_epoch,
            epochs_since_improvement,
        },
        net_config,
    ))
}
