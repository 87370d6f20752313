//! Interaction ingestion, fixed-length left-padded sequences and leave-one-out splits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};

/// Dense index reserved for padding.
pub const PAD: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// Parses a tab-separated interaction log (`user<TAB>item<TAB>timestamp`).
///
/// Lines starting with `#` and blank lines are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let timestamp: i64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp `{}` is not an integer", fields[2].trim()),
        })?;
        if timestamp < 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "negative timestamp".into(),
            });
        }
        out.push(Interaction {
            user_id: user.to_string(),
            item_id: item.to_string(),
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus("no interaction rows".into()));
    }
    Ok(out)
}

/// Bijection between opaque ids and dense indices. Items occupy `1..=num_items()`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    users: Vec<String>,
    items: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Result<Self> {
        let mut user_lookup = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_lookup.insert(u.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate user id `{u}`")));
            }
        }
        let mut item_lookup = HashMap::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            if item_lookup.insert(v.clone(), i + 1).is_some() {
                return Err(Error::invalid(format!("duplicate item id `{v}`")));
            }
        }
        Ok(Self {
            users,
            items,
            user_lookup,
            item_lookup,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    pub fn item_id(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.items.get(i))
            .map(String::as_str)
    }

    pub fn user_id(&self, index: usize) -> Option<&str> {
        self.users.get(index).map(String::as_str)
    }
}

/// A user's most recent `n` items, left-padded with [`PAD`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_index: usize,
    pub positions: Vec<usize>,
    pub pad_count: usize,
}

impl UserSequence {
    /// Keeps the last `n` of `items` and pads on the left.
    pub fn from_items(user_index: usize, items: &[usize], n: usize) -> Self {
        let tail = &items[items.len().saturating_sub(n)..];
        let pad_count = n - tail.len();
        let mut positions = vec![PAD; pad_count];
        positions.extend_from_slice(tail);
        Self {
            user_index,
            positions,
            pad_count,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn real_items(&self) -> &[usize] {
        &self.positions[self.pad_count..]
    }

    pub fn real_len(&self) -> usize {
        self.positions.len() - self.pad_count
    }
}

/// Catalog plus per-user sequences. `histories` keeps the full, untruncated,
/// time-ordered item lists that the fixed-length `sequences` were cut from.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
    pub histories: Vec<Vec<usize>>,
    pub max_len: usize,
}

impl Corpus {
    pub fn num_items(&self) -> usize {
        self.catalog.num_items()
    }

    pub fn num_users(&self) -> usize {
        self.catalog.num_users()
    }
}

/// Groups interactions per user, sorts them by time (stable), truncates to the
/// most recent `max_len` and left-pads. Users with fewer than `min_user_len`
/// interactions are dropped before any index is assigned.
pub fn build_corpus(
    interactions: &[Interaction],
    max_len: usize,
    min_user_len: usize,
) -> Result<Corpus> {
    if max_len < 3 {
        return Err(Error::invalid("max_len must be at least 3"));
    }
    if min_user_len < 3 {
        return Err(Error::invalid("min_user_len must be at least 3"));
    }

    let mut user_order: Vec<&str> = Vec::new();
    let mut per_user: HashMap<&str, Vec<(i64, usize)>> = HashMap::new();
    for (row, it) in interactions.iter().enumerate() {
        let entry = per_user.entry(it.user_id.as_str()).or_insert_with(|| {
            user_order.push(it.user_id.as_str());
            Vec::new()
        });
        entry.push((it.timestamp, row));
    }

    let survivors: Vec<&str> = user_order
        .into_iter()
        .filter(|u| per_user[u].len() >= min_user_len)
        .collect();
    if survivors.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no user has at least {min_user_len} interactions"
        )));
    }

    let mut item_lookup: HashMap<&str, usize> = HashMap::new();
    let mut items: Vec<String> = Vec::new();
    // Item indices follow first appearance in the file among surviving users.
    let mut survivor_rows: Vec<usize> = survivors
        .iter()
        .flat_map(|u| per_user[u].iter().map(|&(_, row)| row))
        .collect();
    survivor_rows.sort_unstable();
    for row in survivor_rows {
        let id = interactions[row].item_id.as_str();
        if !item_lookup.contains_key(id) {
            items.push(id.to_string());
            item_lookup.insert(id, items.len());
        }
    }

    let mut sequences = Vec::with_capacity(survivors.len());
    let mut histories = Vec::with_capacity(survivors.len());
    for (user_index, u) in survivors.iter().enumerate() {
        let mut rows = per_user[u].clone();
        // stable: ties keep input order
        rows.sort_by_key(|&(ts, _)| ts);
        let history: Vec<usize> = rows
            .iter()
            .map(|&(_, row)| item_lookup[interactions[row].item_id.as_str()])
            .collect();
        sequences.push(UserSequence::from_items(user_index, &history, max_len));
        histories.push(history);
    }

    let catalog = Catalog::new(survivors.iter().map(|s| s.to_string()).collect(), items)?;
    Ok(Corpus {
        catalog,
        sequences,
        histories,
        max_len,
    })
}

/// Fraction of all sequence slots that are padding.
pub fn padding_fraction(sequences: &[UserSequence]) -> f64 {
    let total: usize = sequences.iter().map(UserSequence::len).sum();
    let pads: usize = sequences.iter().map(|s| s.pad_count).sum();
    if total == 0 {
        0.0
    } else {
        pads as f64 / total as f64
    }
}

/// Per-item auxiliary feature vectors; row 0 (padding) is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxTable {
    vectors: Matrix,
}

impl AuxTable {
    pub fn zeros(num_items: usize, dim: usize) -> Self {
        Self {
            vectors: Matrix::zeros((num_items + 1, dim)),
        }
    }

    pub fn from_matrix(vectors: Matrix) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::Dimension("aux table needs a padding row".into()));
        }
        if vectors.row(0).iter().any(|&v| v != 0.0) {
            return Err(Error::Dimension("aux padding row must be zero".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("aux vectors must be finite".into()));
        }
        Ok(Self { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_items(&self) -> usize {
        self.vectors.nrows() - 1
    }

    pub fn vector(&self, item: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.row(item)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }
}

/// Loads one or more modality files and concatenates them per item in the given order.
pub fn load_aux<P: AsRef<Path>>(catalog: &Catalog, modality_files: &[P]) -> Result<AuxTable> {
    let mut parts = Vec::with_capacity(modality_files.len());
    for path in modality_files {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parts.push(parse_aux_modality(catalog, &text)?);
    }
    concat_modalities(catalog, parts)
}

/// One modality: `(dim, per-item vector)` with `None` for items absent from the file.
pub type Modality = (usize, Vec<Option<Vec<f64>>>);

pub fn parse_aux_modality(catalog: &Catalog, text: &str) -> Result<Modality> {
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; catalog.num_items() + 1];
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected `item_id<TAB>v1,v2,...`".into(),
        })?;
        let vector: Vec<f64> = values
            .trim()
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad float: {e}"),
            })?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::Dimension(format!(
                    "line {line_no}: vector has {} values, expected {d}",
                    vector.len()
                )))
            }
            _ => {}
        }
        if let Some(idx) = catalog.item_index(id.trim()) {
            rows[idx] = Some(vector);
        }
    }
    Ok((dim.unwrap_or(0), rows))
}

pub fn concat_modalities(catalog: &Catalog, parts: Vec<Modality>) -> Result<AuxTable> {
    let missing: Vec<String> = (1..=catalog.num_items())
        .filter(|&i| parts.iter().any(|(_, rows)| rows[i].is_none()))
        .map(|i| catalog.item_id(i).unwrap_or_default().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAux(missing));
    }
    let total: usize = parts.iter().map(|(d, _)| d).sum();
    let mut vectors = Matrix::zeros((catalog.num_items() + 1, total));
    let mut offset = 0;
    for (d, rows) in &parts {
        for (i, row) in rows.iter().enumerate().skip(1) {
            let row = row.as_ref().expect("checked above");
            for (j, &v) in row.iter().enumerate() {
                vectors[[i, offset + j]] = v;
            }
        }
        offset += d;
    }
    AuxTable::from_matrix(vectors)
}

/// Writes an aux modality file for the given catalog.
pub fn write_aux(path: impl AsRef<Path>, catalog: &Catalog, table: &AuxTable) -> Result<()> {
    let mut out = String::new();
    for i in 1..=catalog.num_items() {
        out.push_str(catalog.item_id(i).unwrap_or_default());
        out.push('\t');
        let row: Vec<String> = table.vector(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Leave-one-out view of one user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train: UserSequence,
    pub valid: usize,
    pub test: usize,
}

impl UserSplit {
    /// Model input and next-item target for training: the training items
    /// shifted by one, the last training item being the target.
    pub fn training_example(&self) -> (UserSequence, usize) {
        let real = self.train.real_items();
        let (last, init) = real.split_last().expect("split keeps at least one item");
        (
            UserSequence::from_items(self.train.user_index, init, self.train.len()),
            *last,
        )
    }

    /// Input used to predict the validation target.
    pub fn validation_input(&self) -> &UserSequence {
        &self.train
    }

    /// Input used to predict the test target (training items plus the validation item).
    pub fn test_input(&self) -> UserSequence {
        let mut items = self.train.real_items().to_vec();
        items.push(self.valid);
        UserSequence::from_items(self.train.user_index, &items, self.train.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitView {
    pub users: Vec<UserSplit>,
}

impl SplitView {
    pub fn training_sequences(&self) -> Vec<UserSequence> {
        self.users.iter().map(|u| u.train.clone()).collect()
    }
}

pub fn leave_one_out(sequences: &[UserSequence]) -> Result<SplitView> {
    let mut users = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let real = seq.real_items();
        if real.len() < 3 {
            return Err(Error::Split {
                user: seq.user_index,
                message: format!("{} real items, need at least 3", real.len()),
            });
        }
        let k = real.len();
        users.push(UserSplit {
            train: UserSequence::from_items(seq.user_index, &real[..k - 2], seq.len()),
            valid: real[k - 2],
            test: real[k - 1],
        });
    }
    Ok(SplitView { users })
}

/// Dataset summary statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub average_sequence_length: f64,
    /// Natural log of users / items.
    pub log_user_item_ratio: f64,
    pub skewness: f64,
    /// Fraction in [0, 1]; multiply by 100 for a percentage.
    pub sparsity: f64,
}

pub fn sparsity(users: usize, items: usize, interactions: usize) -> f64 {
    1.0 - interactions as f64 / (users as f64 * items as f64)
}

/// Moment skewness `m3 / m2^(3/2)` of a sample; 0 for a constant sample.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    let users = corpus.num_users();
    let items = corpus.num_items();
    if users == 0 || items == 0 {
        return Err(Error::EmptyCorpus("no users or items".into()));
    }
    let mut freq = vec![0.0; items];
    let mut interactions = 0;
    for h in &corpus.histories {
        interactions += h.len();
        for &v in h {
            freq[v - 1] += 1.0;
        }
    }
    Ok(CorpusStats {
        users,
        items,
        interactions,
        average_sequence_length: interactions as f64 / users as f64,
        log_user_item_ratio: (users as f64 / items as f64).ln(),
        skewness: skewness(&freq),
        sparsity: sparsity(users, items, interactions),
    })
}
