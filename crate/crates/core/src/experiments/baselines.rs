//! Non-neural reference scorers.

use rand::Rng as _;

use crate::corpus::{UserSequence, PAD};
use crate::error::Result;
use crate::evaluation::Scorer;
use crate::rng::keyed_stream;

/// Same score vector for everyone: training interaction counts.
pub struct PopRec {
    scores: Vec<f64>,
}

impl PopRec {
    pub fn fit(train: &[UserSequence], num_items: usize) -> Self {
        let mut scores = vec![0.0; num_items + 1];
        for seq in train {
            for &v in seq.real_items() {
                scores[v] += 1.0;
            }
        }
        scores[PAD] = f64::NEG_INFINITY;
        Self { scores }
    }
}

impl Scorer for PopRec {
    fn scores(&self, _user: usize, _input: &UserSequence) -> Result<Vec<f64>> {
        Ok(self.scores.clone())
    }
}

/// Uniform random scores, reproducible per `(seed, user)`.
pub struct RandomRec {
    pub seed: u64,
    pub num_items: usize,
}

impl Scorer for RandomRec {
    fn scores(&self, user: usize, _input: &UserSequence) -> Result<Vec<f64>> {
        let mut rng = keyed_stream(self.seed, "random-rec", &[user as u64]);
        let mut out: Vec<f64> = (0..=self.num_items).map(|_| rng.gen::<f64>()).collect();
        out[PAD] = f64::NEG_INFINITY;
        Ok(out)
    }
}
