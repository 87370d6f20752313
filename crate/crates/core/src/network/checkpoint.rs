//! Versioned binary container for network parameters.
//!
//! Layout (little endian): magic `BICORECN`, `u32` version, `u64` seed,
//! `u64` item count, `u64` aux dimension, length-prefixed JSON config echo,
//! `u64` block count, then per block a length-prefixed name, `u64` rows,
//! `u64` cols and `rows * cols` `f64` values in row-major order.

use super::params::{NetworkConfig, NetworkParameters};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BICORECN";
pub const VERSION: u32 = 1;

#[derive(Default)]
pub struct Writer {
    pub bytes: Vec<u8>,
}

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes.extend_from_slice(s.as_bytes());
    }

    pub fn raw(&mut self, b: &[u8]) {
        self.bytes.extend_from_slice(b);
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Encodes the parameter blocks (names, shapes, values) without a header.
pub fn write_blocks(w: &mut Writer, params: &NetworkParameters) {
    let names = params.block_names();
    w.u64(names.len() as u64);
    for (name, block) in names.iter().zip(params.blocks()) {
        w.str(name);
        w.u64(block.nrows() as u64);
        w.u64(block.ncols() as u64);
        for &v in block.iter() {
            w.f64(v);
        }
    }
}

/// Decodes blocks into `template`, checking names and shapes.
pub fn read_blocks(r: &mut Reader<'_>, template: &mut NetworkParameters) -> Result<()> {
    let names = template.block_names();
    let count = r.u64()? as usize;
    if count != names.len() {
        return Err(Error::Checkpoint(format!("expected {} blocks, found {count}", names.len())));
    }
    for (name, block) in names.iter().zip(template.blocks_mut()) {
        let found = r.str()?;
        if &found != name {
            return Err(Error::Checkpoint(format!("expected block `{name}`, found `{found}`")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if (rows, cols) != block.dim() {
            return Err(Error::Checkpoint(format!(
                "block `{name}` has shape {rows}×{cols}, config expects {:?}",
                block.dim()
            )));
        }
        for v in block.iter_mut() {
            *v = r.f64()?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCheckpoint {
    pub config: NetworkConfig,
    pub seed: u64,
    pub params: NetworkParameters,
}

impl NetworkCheckpoint {
    pub fn encode(&self, w: &mut Writer) {
        w.raw(MAGIC);
        w.u32(VERSION);
        w.u64(self.seed);
        w.u64(self.params.num_items() as u64);
        w.u64(self.params.aux_dim() as u64);
        w.str(&serde_json::to_string(&self.config).expect("config serialises"));
        write_blocks(w, &self.params);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.encode(&mut w);
        w.bytes
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        if r.raw(8)? != MAGIC {
            return Err(Error::Checkpoint("not a network checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let num_items = r.u64()? as usize;
        let aux_dim = r.u64()? as usize;
        let config: NetworkConfig = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
        config.validate()?;
        let mut params = template(&config, num_items, aux_dim);
        read_blocks(r, &mut params)?;
        Ok(Self { config, seed, params })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let out = Self::decode(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(out)
    }
}

/// Zero-valued parameters with the shapes implied by `config`.
pub fn template(config: &NetworkConfig, num_items: usize, aux_dim: usize) -> NetworkParameters {
    use crate::autograd::Matrix;
    use super::params::LayerParams;
    let shapes = NetworkParameters::shapes(config, num_items, aux_dim);
    let mut it = shapes.into_iter().map(|(_, s)| Matrix::zeros(s));
    let mut next = || it.next().expect("shape list is complete");
    let mut p = NetworkParameters {
        item_emb: next(),
        pos_emb: next(),
        aux_w: next(),
        aux_b: next(),
        pop_w: next(),
        pop_b: next(),
        co_affinity: next(),
        co_seq: next(),
        co_pop: next(),
        co_score: next(),
        layers: Vec::new(),
    };
    for _ in 0..config.layers {
        p.layers.push(LayerParams {
            wq: next(), bq: next(), wk: next(), bk: next(), wv: next(), bv: next(),
            wo: next(), bo: next(), ln1_gamma: next(), ln1_beta: next(), ffn_w1: next(),
            ffn_b1: next(), ffn_w2: next(), ffn_b2: next(), ln2_gamma: next(), ln2_beta: next(),
        });
    }
    p
}
