//! TF-IDF popularity scores, popular/niche item partition and the Ratio(t) drift diagnostic.
//!
//! A "document" is one user's sequence of real items and a "term" is an item.
//! Scores are low for items that appear in most sequences and high for rare ones.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::{UserSequence, PAD};
use crate::error::{Error, Result};

/// Term frequency of `item` among the real positions of `sequence`.
pub fn tf(item: usize, sequence: &UserSequence) -> Result<f64> {
    if item == PAD {
        return Err(Error::invalid("padding has no term frequency"));
    }
    let real = sequence.real_items();
    if real.is_empty() {
        return Err(Error::invalid("term frequency of an all-padding sequence"));
    }
    let hits = real.iter().filter(|&&v| v == item).count();
    Ok(hits as f64 / real.len() as f64)
}

/// Natural-log inverse document frequency of `item` over `sequences`.
pub fn idf(item: usize, sequences: &[UserSequence]) -> Result<f64> {
    let containing = sequences
        .iter()
        .filter(|s| s.real_items().contains(&item))
        .count();
    if containing == 0 {
        return Err(Error::invalid(format!("item {item} occurs in no sequence; IDF undefined")));
    }
    Ok((sequences.len() as f64 / containing as f64).ln())
}

/// Document frequencies built in one pass; answers IDF queries in O(1).
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable {
    num_sequences: usize,
    doc_freq: Vec<usize>,
}

impl IdfTable {
    pub fn build(sequences: &[UserSequence], num_items: usize) -> Self {
        let mut doc_freq = vec![0usize; num_items + 1];
        let mut seen = vec![usize::MAX; num_items + 1];
        for (s, seq) in sequences.iter().enumerate() {
            for &v in seq.real_items() {
                if seen[v] != s {
                    seen[v] = s;
                    doc_freq[v] += 1;
                }
            }
        }
        Self {
            num_sequences: sequences.len(),
            doc_freq,
        }
    }

    pub fn num_sequences(&self) -> usize {
        self.num_sequences
    }

    pub fn idf(&self, item: usize) -> Result<f64> {
        match self.doc_freq.get(item).copied() {
            Some(0) | None => Err(Error::invalid(format!(
                "item {item} occurs in no sequence; IDF undefined"
            ))),
            Some(df) => Ok((self.num_sequences as f64 / df as f64).ln()),
        }
    }

    /// IDF for scoring unseen inputs: items absent from the table get the
    /// rarest possible value, `ln(S)`.
    pub fn idf_or_rarest(&self, item: usize) -> f64 {
        let df = self.doc_freq.get(item).copied().unwrap_or(0).max(1);
        (self.num_sequences as f64 / df as f64).ln()
    }

    /// TF-IDF row for one sequence, aligned with its positions; pads score 0.
    pub fn score_sequence(&self, sequence: &UserSequence) -> Vec<f64> {
        let real = sequence.real_items();
        let len = real.len() as f64;
        sequence
            .positions
            .iter()
            .map(|&v| {
                if v == PAD {
                    0.0
                } else {
                    let hits = real.iter().filter(|&&w| w == v).count() as f64;
                    hits / len * self.idf_or_rarest(v)
                }
            })
            .collect()
    }
}

/// The user-by-position popularity matrix `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityScores {
    pub rows: Vec<Vec<f64>>,
}

impl PopularityScores {
    pub fn row(&self, user: usize) -> &[f64] {
        &self.rows[user]
    }

    /// Saves the matrix under `dir`, keyed by the content hash of the sequences it was built from.
    pub fn write_cache(&self, dir: impl AsRef<Path>, sequences: &[UserSequence]) -> Result<PathBuf> {
        let path = cache_path(dir.as_ref(), sequences);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"BCPOPQ01");
        bytes.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        let width = self.rows.first().map_or(0, Vec::len);
        bytes.extend_from_slice(&(width as u64).to_le_bytes());
        for row in &self.rows {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Returns `None` when no cache exists for these exact sequences.
    pub fn read_cache(dir: impl AsRef<Path>, sequences: &[UserSequence]) -> Result<Option<Self>> {
        let path = cache_path(dir.as_ref(), sequences);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let bad = || Error::Checkpoint(format!("corrupt popularity cache {}", path.display()));
        if bytes.len() < 24 || &bytes[..8] != b"BCPOPQ01" {
            return Err(bad());
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let width = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if bytes.len() != 24 + rows * width * 8 {
            return Err(bad());
        }
        let values: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(Self {
            rows: values.chunks(width.max(1)).take(rows).map(<[f64]>::to_vec).collect(),
        }))
    }
}

pub fn sequences_hash(sequences: &[UserSequence]) -> String {
    let mut h = Sha256::new();
    for s in sequences {
        h.update((s.user_index as u64).to_le_bytes());
        for &v in &s.positions {
            h.update((v as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_path(dir: &Path, sequences: &[UserSequence]) -> PathBuf {
    dir.join(format!("popularity-{}.bin", &sequences_hash(sequences)[..16]))
}

pub fn compute_popularity_scores(
    sequences: &[UserSequence],
    num_items: usize,
) -> PopularityScores {
    let table = IdfTable::build(sequences, num_items);
    PopularityScores {
        rows: sequences.iter().map(|s| table.score_sequence(s)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemPartition {
    is_popular: Vec<bool>,
    pub popular: Vec<usize>,
    pub niche: Vec<usize>,
    pub frequency: Vec<usize>,
}

impl ItemPartition {
    pub fn is_popular(&self, item: usize) -> bool {
        self.is_popular.get(item).copied().unwrap_or(false)
    }

    pub fn num_items(&self) -> usize {
        self.is_popular.len() - 1
    }
}

/// Splits items into the `ceil(head_fraction * |V|)` most frequent (popular)
/// and the rest (niche). Frequency ties go to the lower item index.
pub fn partition_items<'a, I>(item_lists: I, num_items: usize, head_fraction: f64) -> Result<ItemPartition>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    if !(head_fraction > 0.0 && head_fraction < 1.0) {
        return Err(Error::invalid("head_fraction must lie in (0, 1)"));
    }
    let mut frequency = vec![0usize; num_items + 1];
    for list in item_lists {
        for &v in list.iter().filter(|&&v| v != PAD) {
            frequency[v] += 1;
        }
    }
    let mut order: Vec<usize> = (1..=num_items).collect();
    order.sort_by(|&a, &b| frequency[b].cmp(&frequency[a]).then(a.cmp(&b)));
    let head = (head_fraction * num_items as f64).ceil() as usize;
    let mut is_popular = vec![false; num_items + 1];
    for &v in &order[..head] {
        is_popular[v] = true;
    }
    let mut popular = order[..head].to_vec();
    let mut niche = order[head..].to_vec();
    popular.sort_unstable();
    niche.sort_unstable();
    Ok(ItemPartition {
        is_popular,
        popular,
        niche,
        frequency,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ratio {
    Finite(f64),
    /// Popular items present, no niche items.
    Infinite,
    /// No real item at this position.
    Undefined,
}

impl Ratio {
    pub fn value(self) -> f64 {
        match self {
            Ratio::Finite(v) => v,
            Ratio::Infinite => f64::INFINITY,
            Ratio::Undefined => f64::NAN,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v}"),
            Ratio::Infinite => f.write_str("inf"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioPoint {
    /// 1-based position counted from each user's first real item.
    pub position: usize,
    pub popular_count: usize,
    pub niche_count: usize,
    pub ratio: Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioCurve {
    pub points: Vec<RatioPoint>,
}

impl RatioCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,popular_count,niche_count,ratio\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.position, p.popular_count, p.niche_count, p.ratio
            ));
        }
        out
    }

    /// Positions with a finite ratio, as `(position, ratio)`.
    pub fn finite(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| match p.ratio {
                Ratio::Finite(v) => Some((p.position as f64, v)),
                _ => None,
            })
            .collect()
    }
}

/// Popular-to-niche count ratio at each chronological position `t = 1..=max_positions`,
/// where position `t` is the `t`-th real item of every list long enough to have one.
pub fn ratio_curve<'a, I>(item_lists: I, partition: &ItemPartition, max_positions: usize) -> RatioCurve
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut popular = vec![0usize; max_positions];
    let mut niche = vec![0usize; max_positions];
    for list in item_lists {
        let real = list.iter().filter(|&&v| v != PAD);
        for (t, &v) in real.take(max_positions).enumerate() {
            if partition.is_popular(v) {
                popular[t] += 1;
            } else {
                niche[t] += 1;
            }
        }
    }
    let points = (0..max_positions)
        .map(|t| {
            let (p, q) = (popular[t], niche[t]);
            let ratio = match (p, q) {
                (0, 0) => Ratio::Undefined,
                (_, 0) => Ratio::Infinite,
                _ => Ratio::Finite(p as f64 / q as f64),
            };
            RatioPoint {
                position: t + 1,
                popular_count: p,
                niche_count: q,
                ratio,
            }
        })
        .collect();
    RatioCurve { points }
}
