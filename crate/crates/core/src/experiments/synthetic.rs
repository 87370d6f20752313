//! Synthetic interaction generators: a popularity-drift corpus and a
//! deterministic repeating-motif corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::corpus::Interaction;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Exponent of the Zipf law used inside the popular and niche sets.
    pub zipf_exponent: f64,
    /// Per-position decay of the popular-choice probability.
    pub drift: f64,
    /// Popular-choice probability at the first position.
    pub p0: f64,
    /// Sequence lengths are uniform in `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
    pub aux_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 200,
            zipf_exponent: 1.0,
            drift: 0.05,
            p0: 0.8,
            min_len: 20,
            max_len: 30,
            aux_dim: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf exponent must be positive");
        }
        if !(0.0..=1.0).contains(&self.drift) || !(0.0..=1.0).contains(&self.p0) {
            return bad("drift and p0 must be in [0, 1]");
        }
        if self.items < 2 || self.users == 0 {
            return bad("need at least one user and two items");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        Ok(())
    }

    /// Number of generator-popular items: the first `ceil(0.2 * items)` item numbers.
    pub fn popular_count(&self) -> usize {
        ((0.2 * self.items as f64).ceil() as usize).clamp(1, self.items - 1)
    }

    /// Probability of drawing from the popular set at 0-based position `t`.
    pub fn popular_probability(&self, t: usize) -> f64 {
        self.p0 * (1.0 - self.drift).powi(t as i32)
    }
}

pub fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

/// Item number `i` is 1-based.
pub fn item_id(i: usize) -> String {
    format!("i{i:05}")
}

fn zipf(size: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=size).map(|r| (r as f64).powf(-exponent))).expect("positive weights")
}

/// Drift corpus: at position `t` a user picks from the popular set with
/// probability `p0 (1 - drift)^t`, otherwise from the niche set; Zipf inside
/// each set. Timestamps are positions.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Interaction>> {
    spec.validate()?;
    let mut rng = substream(spec.seed, "synth");
    let pop = spec.popular_count();
    let pop_dist = zipf(pop, spec.zipf_exponent);
    let niche_dist = zipf(spec.items - pop, spec.zipf_exponent);
    let mut out = Vec::new();
    for u in 0..spec.users {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        for t in 0..len {
            let item = if rng.gen::<f64>() < spec.popular_probability(t) {
                1 + pop_dist.sample(&mut rng)
            } else {
                1 + pop + niche_dist.sample(&mut rng)
            };
            out.push(Interaction {
                user_id: user_id(u),
                item_id: item_id(item),
                timestamp: t as i64,
            });
        }
    }
    Ok(out)
}

/// Aux vectors for items `1..=items`: standard normal entries with the
/// first coordinate shifted by +1 for generator-popular items and -1 otherwise.
pub fn synthetic_aux_tsv(spec: &SyntheticSpec) -> String {
    let mut rng = substream(spec.seed, "synth-aux");
    let pop = spec.popular_count();
    let mut out = String::new();
    for i in 1..=spec.items {
        let values: Vec<String> = (0..spec.aux_dim)
            .map(|j| {
                let mut v: f64 = rng.sample(StandardNormal);
                if j == 0 {
                    v += if i <= pop { 1.0 } else { -1.0 };
                }
                format!("{v:.6}")
            })
            .collect();
        let _ = writeln!(out, "{}\t{}", item_id(i), values.join(","));
    }
    out
}

/// Each user repeats a 3-item motif. Motif `m` covers item numbers
/// `3m+1, 3m+2, 3m+3` (wrapping over the catalog); user `u` follows motif
/// `u mod M` starting at phase `(u / M) mod 3`.
pub fn motif_interactions(users: usize, items: usize, length: usize) -> Vec<Interaction> {
    let motifs = items.div_ceil(3);
    let mut out = Vec::with_capacity(users * length);
    for u in 0..users {
        let m = u % motifs;
        let phase = (u / motifs) % 3;
        for t in 0..length {
            let item = (3 * m + (phase + t) % 3) % items + 1;
            out.push(Interaction {
                user_id: user_id(u),
                item_id: item_id(item),
                timestamp: t as i64,
            });
        }
    }
    out
}

pub fn interactions_tsv(interactions: &[Interaction]) -> String {
    let mut out = String::from("# user_id\titem_id\ttimestamp\n");
    for i in interactions {
        let _ = writeln!(out, "{}\t{}\t{}", i.user_id, i.item_id, i.timestamp);
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
